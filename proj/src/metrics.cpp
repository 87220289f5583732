#include "tricluster/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tricluster {

namespace {

int label_range(const std::vector<int>& labels, const char* side) {
  int mx = -1;
  for (int v : labels) {
    if (v < 0) throw std::invalid_argument(std::string("metrics: negative ") + side + " label");
    mx = std::max(mx, v);
  }
  return mx + 1;
}

double entropy_from_counts(const std::vector<long>& counts, long n) {
  double h = 0.0;
  for (long c : counts) {
    if (c <= 0) continue;
    double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return h;
}

double comb2(long x) { return x < 2 ? 0.0 : 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); }

}  // namespace

std::vector<std::vector<long>> contingency(const std::vector<int>& predicted,
                                           const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("contingency: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("contingency: empty labelings");
  const int mp = label_range(predicted, "predicted");
  const int mt = label_range(truth, "true");
  std::vector<std::vector<long>> counts(static_cast<std::size_t>(mp),
                                        std::vector<long>(static_cast<std::size_t>(mt), 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    counts[static_cast<std::size_t>(predicted[i])][static_cast<std::size_t>(truth[i])]++;
  }
  return counts;
}

double nmi(const std::vector<int>& predicted, const std::vector<int>& truth,
           NmiNormalization norm) {
  auto counts = contingency(predicted, truth);
  const long n = static_cast<long>(predicted.size());
  const std::size_t mp = counts.size();
  const std::size_t mt = counts[0].size();
  std::vector<long> row(mp, 0), col(mt, 0);
  for (std::size_t i = 0; i < mp; ++i)
    for (std::size_t j = 0; j < mt; ++j) {
      row[i] += counts[i][j];
      col[j] += counts[i][j];
    }
  double hu = entropy_from_counts(row, n);
  double hv = entropy_from_counts(col, n);
  double mi = 0.0;
  for (std::size_t i = 0; i < mp; ++i) {
    for (std::size_t j = 0; j < mt; ++j) {
      long c = counts[i][j];
      if (c <= 0) continue;
      double pij = static_cast<double>(c) / n;
      double pi = static_cast<double>(row[i]) / n;
      double pj = static_cast<double>(col[j]) / n;
      mi += pij * std::log(pij / (pi * pj));
    }
  }
  double denom = norm == NmiNormalization::kArithmetic ? 0.5 * (hu + hv) : std::sqrt(hu * hv);
  if (denom <= 0.0) return 0.0;
  // clamp away tiny negative rounding and >1 rounding
  return std::min(1.0, std::max(0.0, mi / denom));
}

double acc(const std::vector<int>& predicted, const std::vector<int>& truth) {
  auto counts = contingency(predicted, truth);
  const std::size_t mp = counts.size();
  const std::size_t mt = counts[0].size();
  const std::size_t m = std::max(mp, mt);
  long max_count = 0;
  for (const auto& r : counts)
    for (long c : r) max_count = std::max(max_count, c);
  // square cost matrix, zero-padded: cost = max_count - count
  std::vector<std::vector<double>> cost(m, std::vector<double>(m, static_cast<double>(max_count)));
  for (std::size_t i = 0; i < mp; ++i)
    for (std::size_t j = 0; j < mt; ++j) cost[i][j] = static_cast<double>(max_count - counts[i][j]);
  auto assign = hungarian(cost);
  long matched = 0;
  for (std::size_t i = 0; i < mp; ++i) {
    int j = assign[i];
    if (j >= 0 && static_cast<std::size_t>(j) < mt) matched += counts[i][static_cast<std::size_t>(j)];
  }
  return static_cast<double>(matched) / static_cast<double>(predicted.size());
}

double ari(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() < 2) throw std::invalid_argument("ari: needs at least two samples");
  auto counts = contingency(predicted, truth);
  const long n = static_cast<long>(predicted.size());
  double sum_ij = 0.0, sum_i = 0.0, sum_j = 0.0;
  std::vector<long> row(counts.size(), 0);
  std::vector<long> col(counts[0].size(), 0);
  for (std::size_t i = 0; i < counts.size(); ++i)
    for (std::size_t j = 0; j < counts[0].size(); ++j) {
      sum_ij += comb2(counts[i][j]);
      row[i] += counts[i][j];
      col[j] += counts[i][j];
    }
  for (long r : row) sum_i += comb2(r);
  for (long c : col) sum_j += comb2(c);
  const double total = comb2(n);
  const double expected = sum_i * sum_j / total;
  const double max_index = 0.5 * (sum_i + sum_j);
  if (max_index == expected) return 1.0;  // both partitions degenerate in the same way
  return (sum_ij - expected) / (max_index - expected);
}

// Potentials-based O(n^3) assignment (rows one-indexed internally).
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  for (const auto& r : cost) {
    if (static_cast<int>(r.size()) != n) throw std::invalid_argument("hungarian: square matrix required");
  }
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0), match(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      int i0 = match[static_cast<std::size_t>(j0)], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        double cur = cost[static_cast<std::size_t>(i0 - 1)][static_cast<std::size_t>(j - 1)] -
                     u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    if (match[static_cast<std::size_t>(j)] > 0) {
      row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
    }
  }
  return row_to_col;
}

}  // namespace tricluster
