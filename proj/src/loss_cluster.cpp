#include "tricluster/loss_cluster.hpp"

#include <stdexcept>

namespace tricluster {

namespace {

void require_cluster_matrix(const Tensor& q, const char* name) {
  if (q.rank() != 2) throw std::invalid_argument(std::string("cluster_loss: ") + name + " must be [N, M]");
  if (q.dim(0) < 2 || q.dim(1) < 2) {
    throw std::invalid_argument(std::string("cluster_loss: ") + name + " needs N >= 2 and M >= 2");
  }
}

// One direction of the pair: anchors are columns of qx, the positive sits in
// qy, negatives are the remaining columns of both views. Similarities are
// shifted by their attainable maximum before exponentiation, which lets any
// positive temperature through without overflow.
Tensor infonce_side(const Tensor& qx, const Tensor& qy, const ClusterLossOptions& opts) {
  const double inv_tau = 1.0 / opts.temperature;
  Tensor ex = exp_elem(scalar_mul(scalar_add(column_similarity(qx, qx), -1.0), inv_tau));
  Tensor exy = exp_elem(scalar_mul(scalar_add(column_similarity(qx, qy), -1.0), inv_tau));
  Tensor positive = diagonal(exy);
  Tensor denom = add(row_sum(ex), row_sum(exy));
  if (!opts.include_self_term) denom = sub(denom, diagonal(ex));
  return sum_all(sub(log_elem(denom), log_elem(positive)));
}

}  // namespace

void ClusterLossOptions::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("cluster_loss: temperature must be positive");
}

Tensor column_similarity(const Tensor& qx, const Tensor& qy) {
  if (qx.rank() != 2 || qy.rank() != 2 || qx.shape() != qy.shape()) {
    throw std::invalid_argument("column_similarity: matching [N, M] inputs required");
  }
  Tensor cols_x = l2_normalize_rows(transpose(qx));  // [M, N], unit rows
  Tensor cols_y = l2_normalize_rows(transpose(qy));
  return matmul(cols_x, transpose(cols_y));
}

Tensor assignment_entropy(const Tensor& qx, const Tensor& qy) {
  auto one_view = [](const Tensor& q) {
    // P = column masses over the entrywise 1-norm; entropy with 0 log 0 = 0.
    Tensor masses = row_sum(transpose(q));
    Tensor p = div_by_scalar_tensor(masses, sum_all(q));
    return scalar_mul(sum_all(xlogx(p)), -1.0);
  };
  require_cluster_matrix(qx, "qx");
  require_cluster_matrix(qy, "qy");
  return add(one_view(qx), one_view(qy));
}

Tensor cluster_infonce_pair(const Tensor& qx, const Tensor& qy, const ClusterLossOptions& opts) {
  opts.validate();
  require_cluster_matrix(qx, "qx");
  require_cluster_matrix(qy, "qy");
  const int m = qx.dim(1);
  Tensor nce = scalar_mul(add(infonce_side(qx, qy, opts), infonce_side(qy, qx, opts)),
                          1.0 / (2.0 * static_cast<double>(m)));
  if (!opts.use_entropy) return nce;
  return sub(nce, assignment_entropy(qx, qy));
}

Tensor cluster_loss(const Tensor& q_a, const Tensor& q_b, const Tensor& q_c,
                    const ClusterLossOptions& opts) {
  return add(cluster_infonce_pair(q_a, q_b, opts), cluster_infonce_pair(q_b, q_c, opts));
}

}  // namespace tricluster
