#include <doctest.h>

#include <cmath>
#include <vector>

#include "../oracles.hpp"
#include "tricluster/metrics.hpp"
#include "tricluster/rng.hpp"

using namespace tricluster;

namespace {

std::vector<int> random_labels(Rng& rng, int n, int classes) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return v;
}

}  // namespace

TEST_CASE("contingency basics") {
  auto c = contingency({0, 0, 1, 1}, {0, 0, 1, 1});
  CHECK(c[0][0] == 2);
  CHECK(c[1][1] == 2);
  CHECK(c[0][1] == 0);

  auto single = contingency({0}, {0});
  CHECK(single.size() == 1);
  CHECK(single[0][0] == 1);

  CHECK_THROWS_AS(contingency({0, 1}, {0}), std::invalid_argument);
}

TEST_CASE("contingency marginals equal class counts") {
  Rng rng(21);
  auto pred = random_labels(rng, 50, 4);
  auto truth = random_labels(rng, 50, 3);
  auto c = contingency(pred, truth);
  std::vector<long> row(c.size(), 0), col(c[0].size(), 0);
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = 0; j < c[0].size(); ++j) {
      row[i] += c[i][j];
      col[j] += c[i][j];
    }
  for (std::size_t k = 0; k < row.size(); ++k) {
    long expect = 0;
    for (int v : pred) expect += (v == static_cast<int>(k));
    CHECK(row[k] == expect);
  }
  for (std::size_t k = 0; k < col.size(); ++k) {
    long expect = 0;
    for (int v : truth) expect += (v == static_cast<int>(k));
    CHECK(col[k] == expect);
  }
}

TEST_CASE("nmi boundary values") {
  CHECK(nmi({0, 0, 1, 1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(nmi({0, 0, 0, 0}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  // H(U) = ln 2, H(V) = 1.5 ln 2, I = ln 2 -> arithmetic 0.8, geometric 1/sqrt(1.5)
  CHECK(nmi({0, 0, 1, 1}, {0, 0, 1, 2}) == doctest::Approx(0.8));
  CHECK(nmi({0, 0, 1, 1}, {0, 0, 1, 2}, NmiNormalization::kGeometric) ==
        doctest::Approx(1.0 / std::sqrt(1.5)));
  // both partitions constant: zero entropy on both sides
  CHECK(nmi({0, 0, 0}, {0, 0, 0}) == 0.0);
}

TEST_CASE("acc boundary values") {
  CHECK(acc({2, 2, 0, 0, 1, 1}, {0, 0, 1, 1, 2, 2}) == doctest::Approx(1.0));
  CHECK(acc({1, 1, 0, 0}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(acc({0, 0, 0, 0}, {0, 0, 1, 1}) == doctest::Approx(0.5));
}

TEST_CASE("acc equals exhaustive permutation search") {
  Rng rng(33);
  for (int trial = 0; trial < 40; ++trial) {
    int n = 5 + static_cast<int>(rng.below(20));
    int mp = 2 + static_cast<int>(rng.below(5));  // up to 6 labels
    int mt = 2 + static_cast<int>(rng.below(5));
    auto pred = random_labels(rng, n, mp);
    auto truth = random_labels(rng, n, mt);
    CHECK(acc(pred, truth) == doctest::Approx(oracles::exhaustive_acc(pred, truth)).epsilon(1e-12));
  }
}

TEST_CASE("ari boundary and oracle values") {
  CHECK(ari({0, 0, 1, 1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  double v = ari({0, 0, 1, 1}, {0, 1, 0, 1});
  CHECK(v == doctest::Approx(oracles::pair_count_ari({0, 0, 1, 1}, {0, 1, 0, 1})));
  CHECK(v <= 0.0);
  CHECK_THROWS_AS(ari({0}, {0}), std::invalid_argument);
}

TEST_CASE("ari equals pair-counting oracle on random labelings") {
  Rng rng(44);
  for (int trial = 0; trial < 30; ++trial) {
    int n = 4 + static_cast<int>(rng.below(30));
    auto pred = random_labels(rng, n, 3);
    auto truth = random_labels(rng, n, 4);
    CHECK(ari(pred, truth) == doctest::Approx(oracles::pair_count_ari(pred, truth)).epsilon(1e-10));
  }
}

TEST_CASE("metrics invariant under relabeling") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 10 + static_cast<int>(rng.below(30));
    auto pred = random_labels(rng, n, 4);
    auto truth = random_labels(rng, n, 3);
    // random bijections over the label sets
    std::vector<int> pmap = {0, 1, 2, 3};
    std::vector<int> tmap = {0, 1, 2};
    rng.shuffle(pmap);
    rng.shuffle(tmap);
    auto pred2 = pred;
    auto truth2 = truth;
    for (auto& v : pred2) v = pmap[static_cast<std::size_t>(v)];
    for (auto& v : truth2) v = tmap[static_cast<std::size_t>(v)];
    CHECK(nmi(pred, truth) == doctest::Approx(nmi(pred2, truth2)).epsilon(1e-12));
    CHECK(acc(pred, truth) == doctest::Approx(acc(pred2, truth2)).epsilon(1e-12));
    CHECK(ari(pred, truth) == doctest::Approx(ari(pred2, truth2)).epsilon(1e-12));
  }
}

TEST_CASE("hungarian finds minimal assignments") {
  // 0->1, 1->0 is the cheap matching
  std::vector<std::vector<double>> cost = {{10, 1}, {2, 10}};
  auto a = hungarian(cost);
  CHECK(a[0] == 1);
  CHECK(a[1] == 0);

  Rng rng(66);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.below(4));
    std::vector<std::vector<double>> c(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n)));
    for (auto& row : c)
      for (auto& v : row) v = rng.uniform(0.0, 10.0);
    auto got = hungarian(c);
    double got_cost = 0.0;
    for (int i = 0; i < n; ++i) got_cost += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(got[static_cast<std::size_t>(i)])];
    // brute force
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    double best = 1e18;
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got_cost == doctest::Approx(best).epsilon(1e-12));
  }
}
