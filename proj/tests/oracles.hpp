// Test-only reference implementations. Everything here is written as plain
// scalar loops, independent of the library's vectorized paths, so the two
// routes can be compared against each other.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace oracles {

using Mat = std::vector<std::vector<double>>;

inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// 2 - 2 cos(y, z), one pair of vectors
inline double normalized_mse(const std::vector<double>& y, const std::vector<double>& z) {
  return 2.0 - 2.0 * dot(y, z) / (norm(y) * norm(z));
}

// mean over rows of normalized_mse for two view pairs: (y_a, z_b) and (y_c, z_b)
inline double instance_loss(const Mat& y_a, const Mat& y_c, const Mat& z_b) {
  double l_ab = 0.0, l_bc = 0.0;
  for (std::size_t i = 0; i < z_b.size(); ++i) {
    l_ab += normalized_mse(y_a[i], z_b[i]);
    l_bc += normalized_mse(y_c[i], z_b[i]);
  }
  const double n = static_cast<double>(z_b.size());
  return l_ab / n + l_bc / n;
}

inline std::vector<double> column(const Mat& m, std::size_t j) {
  std::vector<double> c(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) c[i] = m[i][j];
  return c;
}

inline double column_cosine(const Mat& qx, const Mat& qy, std::size_t i, std::size_t j,
                            double eps = 1e-12) {
  auto ci = column(qx, i);
  auto cj = column(qy, j);
  double ni = std::max(norm(ci), eps);
  double nj = std::max(norm(cj), eps);
  return dot(ci, cj) / (ni * nj);
}

// entropy of the per-view column-mass distributions, summed over both views
inline double assignment_entropy(const Mat& qx, const Mat& qy) {
  auto one_view = [](const Mat& q) {
    double total = 0.0;
    for (const auto& r : q) for (double v : r) total += v;
    double h = 0.0;
    for (std::size_t j = 0; j < q[0].size(); ++j) {
      double mass = 0.0;
      for (const auto& r : q) mass += r[j];
      double p = mass / total;
      if (p > 0.0) h -= p * std::log(p);
    }
    return h;
  };
  return one_view(qx) + one_view(qy);
}

// Column-level InfoNCE for one view pair, negatives enumerated explicitly.
// include_self adds the within-view self similarity to the denominator.
inline double cluster_infonce_pair(const Mat& qx, const Mat& qy, double tau, bool include_self,
                                   bool with_entropy = true) {
  const std::size_t m = qx[0].size();
  auto side = [&](const Mat& qa, const Mat& qb) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double positive = std::exp(column_cosine(qa, qb, i, i) / tau);
      double denom = positive;
      for (std::size_t j = 0; j < m; ++j) {
        if (j == i && !include_self) continue;
        denom += std::exp(column_cosine(qa, qa, i, j) / tau);
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (j == i) continue;
        denom += std::exp(column_cosine(qa, qb, i, j) / tau);
      }
      total += -std::log(positive / denom);
    }
    return total;
  };
  double value = (side(qx, qy) + side(qy, qx)) / (2.0 * static_cast<double>(m));
  if (with_entropy) value -= assignment_entropy(qx, qy);
  return value;
}

inline double cluster_loss(const Mat& qa, const Mat& qb, const Mat& qc, double tau,
                           bool include_self, bool with_entropy = true) {
  return cluster_infonce_pair(qa, qb, tau, include_self, with_entropy) +
         cluster_infonce_pair(qb, qc, tau, include_self, with_entropy);
}

// Best-match accuracy via exhaustive search over label permutations.
inline double exhaustive_acc(const std::vector<int>& pred, const std::vector<int>& truth) {
  int m = 0;
  for (int v : pred) m = std::max(m, v + 1);
  for (int v : truth) m = std::max(m, v + 1);
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  long best = 0;
  do {
    long matched = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (perm[static_cast<std::size_t>(pred[i])] == truth[i]) ++matched;
    }
    best = std::max(best, matched);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

// ARI via direct pair counting.
inline double pair_count_ari(const std::vector<int>& pred, const std::vector<int>& truth) {
  double a = 0, b = 0, c = 0, d = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      bool same_p = pred[i] == pred[j];
      bool same_t = truth[i] == truth[j];
      if (same_p && same_t) a += 1;
      else if (same_p && !same_t) b += 1;
      else if (!same_p && same_t) c += 1;
      else d += 1;
    }
  }
  double denom = (a + b) * (b + d) + (a + c) * (c + d);
  if (denom == 0.0) return 1.0;
  return 2.0 * (a * d - b * c) / denom;
}

}  // namespace oracles
