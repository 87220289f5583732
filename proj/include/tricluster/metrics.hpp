#pragma once

#include <vector>

namespace tricluster {

// External clustering quality scores. Labels are nonnegative integers; the
// two labelings must have equal length. All three scores are invariant under
// relabeling of either side.

enum class NmiNormalization { kArithmetic, kGeometric };

// counts[i][j] = number of samples with predicted label i and true label j.
std::vector<std::vector<long>> contingency(const std::vector<int>& predicted,
                                           const std::vector<int>& truth);

// Normalized mutual information in [0, 1]. Defined as 0 when both partitions
// carry zero entropy.
double nmi(const std::vector<int>& predicted, const std::vector<int>& truth,
           NmiNormalization norm = NmiNormalization::kArithmetic);

// Best-match accuracy in [0, 1]: maximizes matched count over one-to-one
// label mappings (Hungarian assignment on the contingency matrix).
double acc(const std::vector<int>& predicted, const std::vector<int>& truth);

// Adjusted Rand index in [-1, 1]; requires at least two samples.
double ari(const std::vector<int>& predicted, const std::vector<int>& truth);

// Minimum-cost perfect assignment on a square cost matrix; returns for each
// row the assigned column.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

}  // namespace tricluster
