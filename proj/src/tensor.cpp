#include "tricluster/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace tricluster {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::atomic<std::uint64_t> g_numeric_warnings{0};
std::atomic<bool> g_finite_checks{true};

std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void check_finite(const Tensor& t, const char* op) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void attach(Tensor& out, std::vector<Tensor> parents,
            std::function<void(const Tensor&)> backward) {
  bool track = false;
  for (const auto& p : parents) track = track || p.tracked();
  if (!track) return;
  auto node = std::make_shared<GradNode>();
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  out.set_node(std::move(node));
}

// Accumulation target for a parent: skipped entirely when the parent is an
// untracked leaf, which is what makes stop-gradient exact.
bool wants_grad(const Tensor& t) { return t.tracked(); }

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
  std::size_t n = shape_product(shape);
  s_->shape = std::move(shape);
  s_->values.assign(n, fill);
  s_->requires_grad = requires_grad;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape product does not match value count");
  }
  Tensor t;
  t.s_->shape = std::move(shape);
  t.s_->values = std::move(values);
  t.s_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar_tensor(double v) { return from_values({1}, {v}); }

std::vector<double>& Tensor::grad() const {
  if (s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
  return s_->grad;
}

void Tensor::zero_grad() const {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

double Tensor::scalar() const {
  if (size() != 1) throw std::invalid_argument("tensor: scalar() on non-scalar");
  return s_->values[0];
}

double& Tensor::operator()(int i, int j) {
  return s_->values[static_cast<std::size_t>(i) * static_cast<std::size_t>(dim(1)) +
                    static_cast<std::size_t>(j)];
}
double Tensor::operator()(int i, int j) const {
  return s_->values[static_cast<std::size_t>(i) * static_cast<std::size_t>(dim(1)) +
                    static_cast<std::size_t>(j)];
}
double& Tensor::operator()(int n, int c, int y, int x) {
  std::size_t idx = ((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x;
  return s_->values[idx];
}
double Tensor::operator()(int n, int c, int y, int x) const {
  std::size_t idx = ((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x;
  return s_->values[idx];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.s_->shape = s_->shape;
  t.s_->values = s_->values;  // value copy; graph edge dropped
  return t;
}

Tensor Tensor::clone() const { return detach(); }

void Tensor::backward() const {
  if (size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  // Post-order DFS for a topological order of the recorded graph.
  std::vector<const Tensor*> order;
  std::vector<std::pair<const Tensor*, std::size_t>> stack;
  std::unordered_set<const void*> visited;
  stack.emplace_back(this, 0);
  visited.insert(storage_id());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t->node();
    if (node && next < node->parents.size()) {
      const Tensor* p = &node->parents[next++];
      if (p->node() && !visited.count(p->storage_id())) {
        visited.insert(p->storage_id());
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }
  grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor* t = *it;
    if (t->node() && t->node()->backward) t->node()->backward(*t);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  check_finite(out, "add");
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    const Tensor& b = o.node()->parents[1];
    const auto& g = o.grad();
    if (wants_grad(a)) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(b)) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  check_finite(out, "sub");
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    const Tensor& b = o.node()->parents[1];
    const auto& g = o.grad();
    if (wants_grad(a)) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants_grad(b)) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  check_finite(out, "mul");
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    const Tensor& b = o.node()->parents[1];
    const auto& g = o.grad();
    if (wants_grad(a)) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.values()[i];
    }
    if (wants_grad(b)) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.values()[i];
    }
  });
  return out;
}

Tensor div_elem(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] / b.values()[i];
  check_finite(out, "div");
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    const Tensor& b = o.node()->parents[1];
    const auto& g = o.grad();
    if (wants_grad(a)) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b.values()[i];
    }
    if (wants_grad(b)) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] -= g[i] * a.values()[i] / (b.values()[i] * b.values()[i]);
      }
    }
  });
  return out;
}

Tensor scalar_mul(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * s;
  check_finite(out, "scalar_mul");
  attach(out, {a}, [s](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    const auto& g = o.grad();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
  return out;
}

Tensor scalar_add(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + s;
  check_finite(out, "scalar_add");
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    const auto& g = o.grad();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = std::max(0.0, a.values()[i]);
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    const auto& g = o.grad();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (a.values()[i] > 0.0) ga[i] += g[i];
    }
  });
  return out;
}

Tensor exp_elem(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = std::exp(a.values()[i]);
  check_finite(out, "exp");
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    const auto& g = o.grad();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * o.values()[i];
  });
  return out;
}

Tensor log_elem(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = std::log(a.values()[i]);
  check_finite(out, "log");
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    const auto& g = o.grad();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.values()[i];
  });
  return out;
}

Tensor xlogx(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a.values()[i];
    out.values()[i] = x > 0.0 ? x * std::log(x) : 0.0;
  }
  check_finite(out, "xlogx");
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    const auto& g = o.grad();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = a.values()[i];
      if (x > 0.0) ga[i] += g[i] * (std::log(x) + 1.0);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 inputs required");
  if (a.dim(1) != b.dim(0)) throw std::invalid_argument("matmul: inner dimensions mismatch");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  CMap ma(a.values().data(), m, k);
  CMap mb(b.values().data(), k, n);
  MMap mo(out.values().data(), m, n);
  mo.noalias() = ma * mb;
  check_finite(out, "matmul");
  attach(out, {a, b}, [m, k, n](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    const Tensor& b = o.node()->parents[1];
    CMap g(o.grad().data(), m, n);
    if (wants_grad(a)) {
      CMap mb(b.values().data(), k, n);
      MMap ga(a.grad().data(), m, k);
      ga.noalias() += g * mb.transpose();
    }
    if (wants_grad(b)) {
      CMap ma(a.values().data(), m, k);
      MMap gb(b.grad().data(), k, n);
      gb.noalias() += ma.transpose() * g;
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 input required");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out(j, i) = a(i, j);
  attach(out, {a}, [m, n](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    auto& ga = a.grad();
    const auto& g = o.grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
  });
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1) throw std::invalid_argument("add_row_bias: [N,D] and [D] required");
  if (x.dim(1) != bias.dim(0)) throw std::invalid_argument("add_row_bias: width mismatch");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out(i, j) = x(i, j) + bias(j);
  check_finite(out, "add_row_bias");
  attach(out, {x, bias}, [n, d](const Tensor& o) {
    const Tensor& x = o.node()->parents[0];
    const Tensor& bias = o.node()->parents[1];
    const auto& g = o.grad();
    if (wants_grad(x)) {
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (wants_grad(bias)) {
      auto& gb = bias.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j];
    }
  });
  return out;
}

Tensor div_by_scalar_tensor(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("div_by_scalar_tensor: divisor must be a scalar");
  const double d = s.values()[0];
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = x.values()[i] / d;
  check_finite(out, "div_by_scalar_tensor");
  attach(out, {x, s}, [d](const Tensor& o) {
    const Tensor& x = o.node()->parents[0];
    const Tensor& s = o.node()->parents[1];
    const auto& g = o.grad();
    if (wants_grad(x)) {
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / d;
    }
    if (wants_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.values()[i];
      s.grad()[0] -= acc / (d * d);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions / structure
// ---------------------------------------------------------------------------

Tensor row_sum(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("row_sum: rank-2 input required");
  const int n = a.dim(0), m = a.dim(1);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += a(i, j);
    out(i) = s;
  }
  check_finite(out, "row_sum");
  attach(out, {a}, [n, m](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    auto& ga = a.grad();
    const auto& g = o.grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) ga[static_cast<std::size_t>(i) * m + j] += g[static_cast<std::size_t>(i)];
  });
  return out;
}

Tensor diagonal(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw std::invalid_argument("diagonal: square matrix required");
  const int m = a.dim(0);
  Tensor out({m});
  for (int i = 0; i < m; ++i) out(i) = a(i, i);
  attach(out, {a}, [m](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    auto& ga = a.grad();
    const auto& g = o.grad();
    for (int i = 0; i < m; ++i) ga[static_cast<std::size_t>(i) * m + i] += g[static_cast<std::size_t>(i)];
  });
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out({1});
  double s = 0.0;
  for (double v : a.values()) s += v;
  out(0) = s;
  check_finite(out, "sum_all");
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    auto& ga = a.grad();
    const double g = o.grad()[0];
    for (auto& v : ga) v += g;
  });
  return out;
}

Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  return scalar_mul(sum_all(a), inv);
}

// ---------------------------------------------------------------------------
// normalizations
// ---------------------------------------------------------------------------

namespace {
// Interpret rank-1 as a single row; rank-2 rowwise.
std::pair<int, int> rows_cols(const Tensor& a, const char* op) {
  if (a.rank() == 1) return {1, a.dim(0)};
  if (a.rank() == 2) return {a.dim(0), a.dim(1)};
  throw std::invalid_argument(std::string(op) + ": rank-1 or rank-2 input required");
}
}  // namespace

Tensor l2_normalize_rows(const Tensor& a) {
  auto [n, d] = rows_cols(a, "l2_normalize");
  Tensor out(a.shape());
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double v = a.values()[static_cast<std::size_t>(i) * d + j];
      s += v * v;
    }
    double norm = std::sqrt(s);
    if (norm < kNormEpsilon) {
      norm = kNormEpsilon;
      g_numeric_warnings.fetch_add(1, std::memory_order_relaxed);
    }
    norms[static_cast<std::size_t>(i)] = norm;
    for (int j = 0; j < d; ++j) {
      out.values()[static_cast<std::size_t>(i) * d + j] =
          a.values()[static_cast<std::size_t>(i) * d + j] / norm;
    }
  }
  check_finite(out, "l2_normalize");
  attach(out, {a}, [n, d, norms](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    auto& ga = a.grad();
    const auto& g = o.grad();
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += g[base + j] * o.values()[base + j];
      const double inv = 1.0 / norms[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j) {
        ga[base + j] += (g[base + j] - o.values()[base + j] * dot) * inv;
      }
    }
  });
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  auto [n, m] = rows_cols(a, "softmax_rows");
  Tensor out(a.shape());
  for (int i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * m;
    double mx = a.values()[base];
    for (int j = 1; j < m; ++j) mx = std::max(mx, a.values()[base + j]);
    double denom = 0.0;
    for (int j = 0; j < m; ++j) {
      double e = std::exp(a.values()[base + j] - mx);
      out.values()[base + j] = e;
      denom += e;
    }
    for (int j = 0; j < m; ++j) out.values()[base + j] /= denom;
  }
  check_finite(out, "softmax_rows");
  attach(out, {a}, [n, m](const Tensor& o) {
    const Tensor& a = o.node()->parents[0];
    if (!wants_grad(a)) return;
    auto& ga = a.grad();
    const auto& g = o.grad();
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * m;
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += g[base + j] * o.values()[base + j];
      for (int j = 0; j < m; ++j) {
        ga[base + j] += o.values()[base + j] * (g[base + j] - dot);
      }
    }
  });
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.rank() != 2) throw std::invalid_argument("layer_norm: rank-2 input required");
  const int n = x.dim(0), d = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  }
  constexpr double eps = 1e-5;
  Tensor out({n, d});
  // keep per-row (mean, inv_std) and the standardized values for the backward
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  std::vector<double> hat(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x.values()[base + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = x.values()[base + j] - mean;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      double h = (x.values()[base + j] - mean) * is;
      hat[base + j] = h;
      out.values()[base + j] = h * gain(j) + bias(j);
    }
  }
  check_finite(out, "layer_norm");
  attach(out, {x, gain, bias}, [n, d, inv_std, hat](const Tensor& o) {
    const Tensor& x = o.node()->parents[0];
    const Tensor& gain = o.node()->parents[1];
    const Tensor& bias = o.node()->parents[2];
    const auto& g = o.grad();
    if (wants_grad(gain)) {
      auto& gg = gain.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          gg[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j] * hat[static_cast<std::size_t>(i) * d + j];
    }
    if (wants_grad(bias)) {
      auto& gb = bias.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j];
    }
    if (wants_grad(x)) {
      auto& gx = x.grad();
      for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * d;
        // dh = g * gain; dx = (dh - mean(dh) - hat * mean(dh*hat)) * inv_std
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          double dh = g[base + j] * gain(j);
          m1 += dh;
          m2 += dh * hat[base + j];
        }
        m1 /= d;
        m2 /= d;
        const double is = inv_std[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j) {
          double dh = g[base + j] * gain(j);
          gx[base + j] += (dh - m1 - hat[base + j] * m2) * is;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int n, c, h, w, f, kh, kw, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad) {
  if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W]");
  if (wt.rank() != 4) throw std::invalid_argument("conv2d: weight must be [F,C,kh,kw]");
  if (x.dim(1) != wt.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvDims d{};
  d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.f = wt.dim(0); d.kh = wt.dim(2); d.kw = wt.dim(3);
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  return d;
}

// Gather receptive fields into rows: [N*Ho*Wo, C*kh*kw].
std::shared_ptr<std::vector<double>> im2col(const Tensor& x, const ConvDims& d, int stride, int pad) {
  const int k = d.c * d.kh * d.kw;
  auto patches = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(d.n) * d.ho * d.wo * k, 0.0);
  const auto& xv = x.values();
  for (int n = 0; n < d.n; ++n) {
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox) {
        std::size_t row = (static_cast<std::size_t>(n) * d.ho + oy) * d.wo + ox;
        double* out = patches->data() + row * k;
        for (int c = 0; c < d.c; ++c) {
          const double* plane = xv.data() + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
          for (int ky = 0; ky < d.kh; ++ky) {
            int y = oy * stride - pad + ky;
            for (int kx = 0; kx < d.kw; ++kx) {
              int xx = ox * stride - pad + kx;
              double v = 0.0;
              if (y >= 0 && y < d.h && xx >= 0 && xx < d.w) v = plane[static_cast<std::size_t>(y) * d.w + xx];
              out[(static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx] = v;
            }
          }
        }
      }
    }
  }
  return patches;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  ConvDims d = conv_dims(x, w, stride, pad);
  if (b.rank() != 1 || b.dim(0) != d.f) throw std::invalid_argument("conv2d: bias must be [F]");
  const int k = d.c * d.kh * d.kw;
  const std::size_t positions = static_cast<std::size_t>(d.n) * d.ho * d.wo;

  auto patches = im2col(x, d, stride, pad);
  // [positions, k] x [k, F] -> [positions, F]
  std::vector<double> y2d(positions * d.f);
  {
    CMap pm(patches->data(), static_cast<Eigen::Index>(positions), k);
    CMap wm(w.values().data(), d.f, k);
    MMap ym(y2d.data(), static_cast<Eigen::Index>(positions), d.f);
    ym.noalias() = pm * wm.transpose();
  }
  Tensor out({d.n, d.f, d.ho, d.wo});
  auto& ov = out.values();
  const int plane = d.ho * d.wo;
  for (int n = 0; n < d.n; ++n) {
    for (int p = 0; p < plane; ++p) {
      const std::size_t row = (static_cast<std::size_t>(n) * plane + p) * d.f;
      for (int f = 0; f < d.f; ++f) {
        ov[(static_cast<std::size_t>(n) * d.f + f) * plane + p] = y2d[row + f] + b(f);
      }
    }
  }
  check_finite(out, "conv2d");

  const bool keep = x.tracked() || w.tracked() || b.tracked();
  if (!keep) return out;
  attach(out, {x, w, b}, [d, stride, pad, k, positions, patches, plane](const Tensor& o) {
    const Tensor& x = o.node()->parents[0];
    const Tensor& w = o.node()->parents[1];
    const Tensor& b = o.node()->parents[2];
    // regroup output grad as [positions, F]
    std::vector<double> g2d(positions * d.f);
    const auto& og = o.grad();
    for (int n = 0; n < d.n; ++n) {
      for (int p = 0; p < plane; ++p) {
        const std::size_t row = (static_cast<std::size_t>(n) * plane + p) * d.f;
        for (int f = 0; f < d.f; ++f) {
          g2d[row + f] = og[(static_cast<std::size_t>(n) * d.f + f) * plane + p];
        }
      }
    }
    CMap gm(g2d.data(), static_cast<Eigen::Index>(positions), d.f);
    if (wants_grad(b)) {
      auto& gb = b.grad();
      for (std::size_t r = 0; r < positions; ++r)
        for (int f = 0; f < d.f; ++f) gb[static_cast<std::size_t>(f)] += g2d[r * d.f + f];
    }
    if (wants_grad(w)) {
      CMap pm(patches->data(), static_cast<Eigen::Index>(positions), k);
      MMap gw(w.grad().data(), d.f, k);
      gw.noalias() += gm.transpose() * pm;
    }
    if (wants_grad(x)) {
      std::vector<double> gpatches(positions * k);
      {
        CMap wm(w.values().data(), d.f, k);
        MMap gp(gpatches.data(), static_cast<Eigen::Index>(positions), k);
        gp.noalias() = gm * wm;
      }
      auto& gx = x.grad();
      for (int n = 0; n < d.n; ++n) {
        for (int oy = 0; oy < d.ho; ++oy) {
          for (int ox = 0; ox < d.wo; ++ox) {
            std::size_t row = (static_cast<std::size_t>(n) * d.ho + oy) * d.wo + ox;
            const double* gp = gpatches.data() + row * k;
            for (int c = 0; c < d.c; ++c) {
              double* gplane = gx.data() + (static_cast<std::size_t>(n) * d.c + c) * d.h * d.w;
              for (int ky = 0; ky < d.kh; ++ky) {
                int y = oy * stride - pad + ky;
                if (y < 0 || y >= d.h) continue;
                for (int kx = 0; kx < d.kw; ++kx) {
                  int xx = ox * stride - pad + kx;
                  if (xx < 0 || xx >= d.w) continue;
                  gplane[static_cast<std::size_t>(y) * d.w + xx] +=
                      gp[(static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx];
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor avg_pool2x2(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("avg_pool2x2: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("avg_pool2x2: odd spatial size");
  const int ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          out(i, ch, y, xx) = 0.25 * (x(i, ch, 2 * y, 2 * xx) + x(i, ch, 2 * y, 2 * xx + 1) +
                                      x(i, ch, 2 * y + 1, 2 * xx) + x(i, ch, 2 * y + 1, 2 * xx + 1));
        }
  attach(out, {x}, [n, c, ho, wo](const Tensor& o) {
    const Tensor& x = o.node()->parents[0];
    if (!wants_grad(x)) return;
    auto& gx = x.grad();
    const auto& g = o.grad();
    const int h = ho * 2, w = wo * 2;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
          for (int xx = 0; xx < wo; ++xx) {
            double gv = 0.25 * g[((static_cast<std::size_t>(i) * c + ch) * ho + y) * wo + xx];
            std::size_t b = (static_cast<std::size_t>(i) * c + ch) * h * w;
            gx[b + static_cast<std::size_t>(2 * y) * w + 2 * xx] += gv;
            gx[b + static_cast<std::size_t>(2 * y) * w + 2 * xx + 1] += gv;
            gx[b + static_cast<std::size_t>(2 * y + 1) * w + 2 * xx] += gv;
            gx[b + static_cast<std::size_t>(2 * y + 1) * w + 2 * xx + 1] += gv;
          }
  });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) s += x(i, ch, y, xx);
      out(i, ch) = s * inv;
    }
  check_finite(out, "global_avg_pool");
  attach(out, {x}, [n, c, h, w, inv](const Tensor& o) {
    const Tensor& x = o.node()->parents[0];
    if (!wants_grad(x)) return;
    auto& gx = x.grad();
    const auto& g = o.grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        double gv = g[static_cast<std::size_t>(i) * c + ch] * inv;
        std::size_t b = (static_cast<std::size_t>(i) * c + ch) * h * w;
        for (int p = 0; p < h * w; ++p) gx[b + p] += gv;
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& p, double step) {
  if (step < 1e-6 || step > 1e-4) throw std::invalid_argument("grad_check: step outside [1e-6, 1e-4]");
  Tensor var = p.detach();
  var.set_requires_grad(true);
  Tensor loss = f(var);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  if (!std::isfinite(loss.scalar())) throw std::runtime_error("grad_check: non-finite loss at p");
  loss.backward();
  std::vector<double> analytic = var.grad();

  Tensor probe = p.detach();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + step;
    double fp = f(probe).scalar();
    probe.values()[i] = orig - step;
    double fm = f(probe).scalar();
    probe.values()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("grad_check: non-finite loss near p");
    }
    double numeric = (fp - fm) / (2.0 * step);
    double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

std::uint64_t numeric_warning_count() { return g_numeric_warnings.load(); }
void reset_numeric_warnings() { g_numeric_warnings.store(0); }
void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

}  // namespace tricluster
