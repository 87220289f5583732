#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tricluster {

class Tensor;

// One recorded operation: the output's handle keeps its inputs alive and a
// closure that scatters d(loss)/d(output) into the inputs' grad buffers.
struct GradNode {
  std::vector<Tensor> parents;
  std::function<void(const Tensor& out)> backward;
};

// Dense row-major tensor of doubles with reverse-mode autodiff. Copies are
// shallow (shared storage); detach() drops the graph edge, which is how
// stop-gradient boundaries are expressed. A tensor whose requires_grad flag
// is false never receives gradient, so non-trainable parameters accumulate
// exactly zero.
class Tensor {
 public:
  Tensor() : s_(std::make_shared<Storage>()) {}
  explicit Tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar_tensor(double v);

  const std::vector<int>& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return s_->values.size(); }

  std::vector<double>& values() { return s_->values; }
  const std::vector<double>& values() const { return s_->values; }

  // Lazily allocated, zero-initialized gradient buffer.
  std::vector<double>& grad() const;
  bool has_grad() const { return !s_->grad.empty(); }
  void zero_grad() const;

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }
  // True when this tensor participates in gradient recording.
  bool tracked() const { return s_->requires_grad || s_->node != nullptr; }

  const std::shared_ptr<GradNode>& node() const { return s_->node; }
  void set_node(std::shared_ptr<GradNode> n) { s_->node = std::move(n); }

  double scalar() const;
  double& operator()(int i) { return s_->values[static_cast<std::size_t>(i)]; }
  double operator()(int i) const { return s_->values[static_cast<std::size_t>(i)]; }
  double& operator()(int i, int j);
  double operator()(int i, int j) const;
  double& operator()(int n, int c, int y, int x);
  double operator()(int n, int c, int y, int x) const;

  // Same values, no graph edge, no gradient demand.
  Tensor detach() const;
  // Deep copy of values (no graph).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  const void* storage_id() const { return s_.get(); }

  // Reverse pass from this scalar; accumulates into grad buffers of every
  // tracked tensor reachable through the recorded graph.
  void backward() const;

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<double> values;
    mutable std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<GradNode> node;
  };
  std::shared_ptr<Storage> s_;
};

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div_elem(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor scalar_add(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);
// x * log(x) with the 0 * log 0 := 0 convention (entropy terms).
Tensor xlogx(const Tensor& a);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x: [N, D], bias: [D] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

// x / s where s is a 1-element tensor; gradient flows into both.
Tensor div_by_scalar_tensor(const Tensor& x, const Tensor& s);

// --- reductions / structure ---
Tensor row_sum(const Tensor& a);    // [N, M] -> [N]
Tensor diagonal(const Tensor& a);   // [M, M] -> [M]
Tensor sum_all(const Tensor& a);    // -> scalar
Tensor mean_all(const Tensor& a);   // -> scalar

// --- normalizations ---
// Rows scaled to unit L2 norm (a lone vector counts as one row). Norms below
// kNormEpsilon are clamped and counted as numeric warnings.
Tensor l2_normalize_rows(const Tensor& a);
// Row-stochastic softmax with max-subtraction.
Tensor softmax_rows(const Tensor& a);
// Per-row standardization followed by learned gain/bias (no batch coupling).
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias);

// --- spatial ops on [N, C, H, W] ---
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor avg_pool2x2(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // -> [N, C]

inline constexpr double kNormEpsilon = 1e-12;

// Central-difference validation of the recorded gradients of f at p.
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& p,
                  double step = 1e-5);

// Count of epsilon-clamps taken by normalization ops since the last reset.
std::uint64_t numeric_warning_count();
void reset_numeric_warnings();

// When enabled (default), every op validates its output for NaN/Inf.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace tricluster
