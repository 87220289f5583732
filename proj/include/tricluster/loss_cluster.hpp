#pragma once

#include "tricluster/tensor.hpp"

namespace tricluster {

// Cluster-level InfoNCE over the columns of the soft-assignment matrices,
// with the per-pair assignment entropy subtracted to keep the marginal
// cluster masses from collapsing.
struct ClusterLossOptions {
  double temperature = 0.5;
  // The printed denominator form sums the within-view self term as well;
  // the negatives count in the prose excludes it. Off reproduces the prose
  // count (positive + 2M-2 negatives), on the literal sum.
  bool include_self_term = false;
  bool use_entropy = true;

  void validate() const;
};

// S[i, j] = cosine between column i of qx and column j of qy; zero columns
// are epsilon-clamped (counted as numeric warnings).
Tensor column_similarity(const Tensor& qx, const Tensor& qy);

// H(Q) = entropy of the normalized column masses, summed over both views.
Tensor assignment_entropy(const Tensor& qx, const Tensor& qy);

// (1/2M) sum_i (l_i^x + l_i^y) minus the pair's entropy term.
Tensor cluster_infonce_pair(const Tensor& qx, const Tensor& qy, const ClusterLossOptions& opts);

// Pair (a, b) plus pair (b, c).
Tensor cluster_loss(const Tensor& q_a, const Tensor& q_b, const Tensor& q_c,
                    const ClusterLossOptions& opts);

}  // namespace tricluster
