#include <doctest.h>

#include <cmath>
#include <vector>

#include "../oracles.hpp"
#include "tricluster/rng.hpp"
#include "tricluster/tensor.hpp"

using namespace tricluster;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and 1x1") {
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from_values({2, 1}, {3, 4});
  Tensor out = matmul(eye, v);
  CHECK(out(0, 0) == doctest::Approx(3.0));
  CHECK(out(1, 0) == doctest::Approx(4.0));

  Tensor a = Tensor::from_values({1, 1}, {2});
  Tensor b = Tensor::from_values({1, 1}, {3});
  CHECK(matmul(a, b)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  oracles::Mat am(3, std::vector<double>(4)), bm(4, std::vector<double>(2));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) am[i][j] = a(i, j);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) bm[i][j] = b(i, j);
  auto expect = oracles::naive_matmul(am, bm);
  Tensor out = matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) CHECK(out(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch throws") {
  Tensor a({2, 3});
  Tensor b({2, 2});
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("l2_normalize basics") {
  Tensor v = Tensor::from_values({2}, {3, 4});
  Tensor out = l2_normalize_rows(v);
  CHECK(out(0) == doctest::Approx(0.6));
  CHECK(out(1) == doctest::Approx(0.8));

  Tensor unit = Tensor::from_values({2}, {1, 0});
  Tensor same = l2_normalize_rows(unit);
  CHECK(same(0) == doctest::Approx(1.0));
  CHECK(same(1) == doctest::Approx(0.0));

  Rng rng(3);
  Tensor r = random_tensor({10}, rng);
  Tensor n = l2_normalize_rows(r);
  double norm = 0.0;
  for (double x : n.values()) norm += x * x;
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
}

TEST_CASE("l2_normalize clamps near-zero norm and warns") {
  reset_numeric_warnings();
  Tensor z = Tensor::from_values({3}, {0, 0, 0});
  Tensor out = l2_normalize_rows(z);
  for (double v : out.values()) CHECK(std::isfinite(v));
  CHECK(numeric_warning_count() == 1);
  reset_numeric_warnings();
}

TEST_CASE("softmax_rows basics and stability") {
  Tensor flat = Tensor::from_values({1, 2}, {0, 0});
  Tensor s = softmax_rows(flat);
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(0, 1) == doctest::Approx(0.5));

  Tensor big = Tensor::from_values({1, 2}, {1000, 0});
  Tensor sb = softmax_rows(big);
  CHECK(sb(0, 0) == doctest::Approx(1.0));
  CHECK(sb(0, 1) == doctest::Approx(0.0));
  for (double v : sb.values()) CHECK(std::isfinite(v));

  Rng rng(5);
  Tensor r = random_tensor({4, 3}, rng, -1e3, 1e3);
  Tensor sr = softmax_rows(r);
  for (int i = 0; i < 4; ++i) {
    double sum = sr(i, 0) + sr(i, 1) + sr(i, 2);
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("grad_check on square function") {
  Tensor p = Tensor::from_values({1}, {3.0});
  auto f = [](const Tensor& x) { return sum_all(mul(x, x)); };
  double err = grad_check(f, p, 1e-5);
  CHECK(err < 1e-8);
  // analytic derivative at 3 is 6
  Tensor var = p.detach();
  var.set_requires_grad(true);
  f(var).backward();
  CHECK(var.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("grad_check across every differentiable op") {
  Rng rng(17);
  auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f,
                   Tensor p) {
    double err = grad_check(f, p, 1e-5);
    INFO(name);
    CHECK(err < 1e-4);
  };

  Tensor m34 = random_tensor({3, 4}, rng);
  Tensor m34b = random_tensor({3, 4}, rng);
  Tensor m43 = random_tensor({4, 3}, rng);
  Tensor mm = random_tensor({3, 3}, rng);
  Tensor vec4 = random_tensor({4}, rng);

  check("add", [&](const Tensor& x) { return sum_all(mul(add(x, m34b), add(x, m34b))); }, m34);
  check("sub", [&](const Tensor& x) { return sum_all(mul(sub(x, m34b), sub(x, m34b))); }, m34);
  check("mul", [&](const Tensor& x) { return sum_all(mul(x, m34b)); }, m34);
  check("div", [&](const Tensor& x) { return sum_all(div_elem(m34b, scalar_add(mul(x, x), 1.0))); }, m34);
  check("scalar ops", [&](const Tensor& x) { return sum_all(scalar_add(scalar_mul(x, 2.5), -1.0)); }, m34);
  check("matmul lhs", [&](const Tensor& x) { return sum_all(mul(matmul(x, m43), matmul(x, m43))); }, m34);
  check("matmul rhs", [&](const Tensor& x) { return sum_all(mul(matmul(m34, x), matmul(m34, x))); }, m43);
  check("transpose", [&](const Tensor& x) { return sum_all(mul(transpose(x), transpose(x))); }, m34);
  check("add_row_bias x", [&](const Tensor& x) { return sum_all(mul(add_row_bias(x, vec4), add_row_bias(x, vec4))); }, m34);
  check("add_row_bias b", [&](const Tensor& x) { return sum_all(mul(add_row_bias(m34, x), add_row_bias(m34, x))); }, vec4);
  check("row_sum", [&](const Tensor& x) { return sum_all(mul(row_sum(x), row_sum(x))); }, m34);
  check("diagonal", [&](const Tensor& x) { return sum_all(mul(diagonal(x), diagonal(x))); }, mm);
  check("mean_all", [&](const Tensor& x) { return mean_all(mul(x, x)); }, m34);
  check("l2_normalize", [&](const Tensor& x) { return sum_all(mul(l2_normalize_rows(x), m34b)); },
        random_tensor({3, 4}, rng, 0.5, 1.5));
  check("softmax_rows", [&](const Tensor& x) { return sum_all(mul(softmax_rows(x), m34b)); }, m34);
  check("relu", [&](const Tensor& x) { return sum_all(mul(relu(x), relu(x))); },
        random_tensor({3, 4}, rng, 0.2, 1.0));
  check("exp", [&](const Tensor& x) { return sum_all(exp_elem(x)); }, m34);
  check("log", [&](const Tensor& x) { return sum_all(log_elem(x)); },
        random_tensor({3, 4}, rng, 0.5, 2.0));
  check("xlogx", [&](const Tensor& x) { return sum_all(xlogx(x)); },
        random_tensor({3, 4}, rng, 0.2, 1.0));

  Tensor gain = random_tensor({4}, rng, 0.5, 1.5);
  Tensor bias = random_tensor({4}, rng);
  check("layer_norm x", [&](const Tensor& x) { return sum_all(mul(layer_norm_rows(x, gain, bias), m34b)); }, m34);
  check("layer_norm gain", [&](const Tensor& x) { return sum_all(mul(layer_norm_rows(m34, x, bias), m34b)); }, gain);
  check("layer_norm bias", [&](const Tensor& x) { return sum_all(mul(layer_norm_rows(m34, gain, x), m34b)); }, bias);

  Tensor img = random_tensor({2, 2, 4, 4}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor cb = random_tensor({3}, rng, -0.1, 0.1);
  Tensor mask = random_tensor({2, 3, 4, 4}, rng);
  check("conv2d x", [&](const Tensor& x) { return sum_all(mul(conv2d(x, w, cb, 1, 1), mask)); }, img);
  check("conv2d w", [&](const Tensor& x) { return sum_all(mul(conv2d(img, x, cb, 1, 1), mask)); }, w);
  check("conv2d b", [&](const Tensor& x) { return sum_all(mul(conv2d(img, w, x, 1, 1), mask)); }, cb);
  Tensor mask2 = random_tensor({2, 2, 2, 2}, rng);
  check("avg_pool2x2", [&](const Tensor& x) { return sum_all(mul(avg_pool2x2(x), mask2)); }, img);
  Tensor maskg = random_tensor({2, 2}, rng);
  check("global_avg_pool", [&](const Tensor& x) { return sum_all(mul(global_avg_pool(x), maskg)); }, img);

  // strided conv as used by the residual backbone
  Tensor ws = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor masks = random_tensor({2, 3, 2, 2}, rng);
  check("conv2d stride 2", [&](const Tensor& x) { return sum_all(mul(conv2d(x, ws, cb, 2, 1), masks)); }, img);
}

TEST_CASE("shared subexpression accumulates gradient once per use") {
  Tensor x = Tensor::from_values({1}, {1.5});
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  Tensor loss = sum_all(add(y, y));  // 2 x^2, derivative 4 x = 6
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("stop-gradient: untracked leaf receives exactly zero gradient") {
  Tensor p = Tensor::from_values({2}, {1.0, 2.0});
  p.set_requires_grad(true);
  Tensor frozen = Tensor::from_values({2}, {3.0, 4.0});  // requires_grad stays false
  Tensor loss = sum_all(mul(p, frozen));
  loss.backward();
  CHECK(p.grad()[0] == doctest::Approx(3.0));
  CHECK(p.grad()[1] == doctest::Approx(4.0));
  for (double g : frozen.grad()) CHECK(g == 0.0);
}

TEST_CASE("detach blocks gradient flow") {
  Tensor p = Tensor::from_values({2}, {1.0, 2.0});
  p.set_requires_grad(true);
  Tensor through = mul(p, p);
  Tensor blocked = through.detach();
  Tensor loss = sum_all(mul(p, blocked));
  loss.backward();
  // only the direct p factor contributes: d/dp sum(p * c) = c = p^2
  CHECK(p.grad()[0] == doctest::Approx(1.0));
  CHECK(p.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("finite checks flag non-finite op results") {
  CHECK(finite_checks_enabled());
  Tensor huge = Tensor::from_values({1}, {1e9});
  CHECK_THROWS_AS(exp_elem(huge), std::runtime_error);
  set_finite_checks(false);
  Tensor inf = exp_elem(huge);
  CHECK(std::isinf(inf(0)));
  set_finite_checks(true);
}

TEST_CASE("ops reject malformed shapes") {
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), std::invalid_argument);
  CHECK_THROWS_AS(diagonal(Tensor({2, 3})), std::invalid_argument);
  CHECK_THROWS_AS(avg_pool2x2(Tensor({1, 1, 3, 4})), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({1, 2}).scalar(), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0}), std::invalid_argument);
}

TEST_CASE("grad_check validates its own preconditions") {
  Tensor p = Tensor::from_values({1}, {1.0});
  auto f = [](const Tensor& x) { return sum_all(x); };
  CHECK_THROWS_AS(grad_check(f, p, 1e-2), std::invalid_argument);
  set_finite_checks(false);
  auto bad = [](const Tensor& x) { return log_elem(scalar_add(x, -1.0)); };  // log(0) at p
  CHECK_THROWS_AS(grad_check(bad, p, 1e-5), std::runtime_error);
  set_finite_checks(true);
}
