#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "tricluster/augment.hpp"
#include "tricluster/data.hpp"
#include "tricluster/rng.hpp"

using namespace tricluster;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

AugmentPolicy identity_policy(int size) {
  AugmentPolicy p;
  p.output_size = size;
  p.crop_probability = 0.0;
  p.flip_probability = 0.0;
  p.jitter_probability = 0.0;
  p.grayscale_probability = 0.0;
  p.blur_probability = 0.0;
  return p;
}

}  // namespace

TEST_CASE("identity policy returns the resized input") {
  Image img = random_image(16, 16, 1);
  Rng rng(2);
  Image out = apply_policy(img, identity_policy(16), rng);
  REQUIRE(out.data.size() == img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == img.data[i]);

  // non-matching input size: equals plain bilinear resize
  Image big = random_image(24, 20, 3);
  Rng rng2(2);
  Image resized = apply_policy(big, identity_policy(16), rng2);
  Image expect = resize_bilinear(big, 16, 16);
  for (std::size_t i = 0; i < expect.data.size(); ++i) CHECK(resized.data[i] == expect.data[i]);
}

TEST_CASE("grayscale output has equal channels") {
  AugmentPolicy p = identity_policy(16);
  p.grayscale_probability = 1.0;
  Image img = random_image(16, 16, 4);
  Rng rng(5);
  Image out = apply_policy(img, p, rng);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      CHECK(out.at(0, y, x) == doctest::Approx(out.at(1, y, x)));
      CHECK(out.at(1, y, x) == doctest::Approx(out.at(2, y, x)));
    }
}

TEST_CASE("apply_policy replays byte-identically for a fixed seed") {
  AugmentPolicy p;  // defaults: every transform active
  p.output_size = 16;
  Image img = random_image(16, 16, 6);
  Rng r1(99), r2(99);
  Image a = apply_policy(img, p, r1);
  Image b = apply_policy(img, p, r2);
  REQUIRE(a.data.size() == b.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("apply_policy rejects degenerate inputs") {
  Image tiny(1, 1);
  Rng rng(1);
  CHECK_THROWS_AS(apply_policy(tiny, AugmentPolicy{}, rng), std::invalid_argument);

  AugmentPolicy bad;
  bad.flip_probability = 1.5;
  Image img = random_image(16, 16, 7);
  CHECK_THROWS_AS(apply_policy(img, bad, rng), std::invalid_argument);
}

TEST_CASE("make_views: degenerate policy gives identical views") {
  std::vector<Image> batch = {random_image(16, 16, 8)};
  ViewTriple v = make_views(batch, identity_policy(16), 42);
  for (std::size_t i = 0; i < v.a[0].data.size(); ++i) {
    CHECK(v.a[0].data[i] == v.b[0].data[i]);
    CHECK(v.b[0].data[i] == v.c[0].data[i]);
  }
}

TEST_CASE("make_views rejects an empty batch") {
  std::vector<Image> empty;
  CHECK_THROWS_AS(make_views(empty, AugmentPolicy{}, 0), std::invalid_argument);
}

TEST_CASE("make_views replays exactly under the same seed") {
  std::vector<Image> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_image(16, 16, 100 + static_cast<std::uint64_t>(i)));
  AugmentPolicy p;
  p.output_size = 16;
  ViewTriple v1 = make_views(batch, p, 1234);
  ViewTriple v2 = make_views(batch, p, 1234);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(v1.a[i].data == v2.a[i].data);
    CHECK(v1.b[i].data == v2.b[i].data);
    CHECK(v1.c[i].data == v2.c[i].data);
  }
}

TEST_CASE("views differ across streams with high probability") {
  std::vector<Image> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_image(16, 16, 200 + static_cast<std::uint64_t>(i)));
  AugmentPolicy p;
  p.output_size = 16;
  int distinct = 0;
  for (int draw = 0; draw < 100; ++draw) {
    ViewTriple v = make_views(batch, p, static_cast<std::uint64_t>(draw));
    bool any_diff = false;
    for (std::size_t i = 0; i < batch.size() && !any_diff; ++i) {
      any_diff = v.a[i].data != v.b[i].data || v.b[i].data != v.c[i].data;
    }
    if (any_diff) ++distinct;
  }
  CHECK(distinct >= 95);
}

TEST_CASE("pixel range and shape preserved under random policies") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    AugmentPolicy p;
    p.output_size = 16;
    p.crop_probability = rng.uniform();
    p.flip_probability = rng.uniform();
    p.jitter_probability = rng.uniform();
    p.grayscale_probability = rng.uniform();
    p.blur_probability = rng.uniform();
    Image img = random_image(12 + static_cast<int>(rng.below(10)), 12 + static_cast<int>(rng.below(10)),
                             rng.next_u64());
    Rng stream(rng.next_u64());
    Image out = apply_policy(img, p, stream);
    CHECK(out.height == 16);
    CHECK(out.width == 16);
    for (double v : out.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
