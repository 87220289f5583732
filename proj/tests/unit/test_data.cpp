#include <doctest.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "tricluster/augment.hpp"
#include "tricluster/data.hpp"
#include "tricluster/rng.hpp"

using namespace tricluster;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("tricluster_test_" + std::to_string(Rng(std::random_device{}()).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_png(const fs::path& file, int seed) {
  cv::Mat m(20, 20, CV_8UC3);
  Rng rng(static_cast<std::uint64_t>(seed));
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<uchar>(rng.below(256)),
                                        static_cast<uchar>(rng.below(256)),
                                        static_cast<uchar>(rng.below(256)));
    }
  cv::imwrite(file.string(), m);
}

double mean_pixel_distance(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

}  // namespace

TEST_CASE("image folder loader enumerates classes in sorted order") {
  TempDir tmp;
  fs::create_directories(tmp.path / "cats");
  fs::create_directories(tmp.path / "dogs");
  for (int i = 0; i < 3; ++i) {
    write_png(tmp.path / "cats" / ("img" + std::to_string(i) + ".png"), i);
    write_png(tmp.path / "dogs" / ("img" + std::to_string(i) + ".png"), 10 + i);
  }
  LabeledImageSet set = load_image_folder(tmp.path.string(), 16);
  CHECK(set.size() == 6);
  CHECK(set.classes == 2);
  for (int i = 0; i < 3; ++i) CHECK(set.labels[static_cast<std::size_t>(i)] == 0);
  for (int i = 3; i < 6; ++i) CHECK(set.labels[static_cast<std::size_t>(i)] == 1);
  for (const auto& img : set.images) {
    CHECK(img.height == 16);
    CHECK(img.width == 16);
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  LabeledImageSet again = load_image_folder(tmp.path.string(), 16);
  REQUIRE(again.size() == set.size());
  for (std::size_t i = 0; i < set.size(); ++i) CHECK(again.images[i].data == set.images[i].data);
}

TEST_CASE("image folder loader names the offending file") {
  TempDir tmp;
  fs::create_directories(tmp.path / "a");
  write_png(tmp.path / "a" / "ok.png", 1);
  std::ofstream bad(tmp.path / "a" / "broken.png");
  bad << "not a png";
  bad.close();
  try {
    load_image_folder(tmp.path.string(), 16);
    FAIL("expected an error for the corrupt file");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
  }
}

TEST_CASE("image folder loader rejects empty class directories") {
  TempDir tmp;
  fs::create_directories(tmp.path / "empty");
  CHECK_THROWS_AS(load_image_folder(tmp.path.string(), 16), std::runtime_error);
}

TEST_CASE("cifar loader parses records and validates labels") {
  TempDir tmp;
  Rng rng(77);
  Image img1(32, 32), img2(32, 32);
  for (auto& v : img1.data) v = rng.below(256) / 255.0;
  for (auto& v : img2.data) v = rng.below(256) / 255.0;
  auto rec1 = encode_cifar_record(img1, {3});
  auto rec2 = encode_cifar_record(img2, {9});
  fs::path file = tmp.path / "batch.bin";
  {
    std::ofstream out(file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(rec1.data()), static_cast<std::streamsize>(rec1.size()));
    out.write(reinterpret_cast<const char*>(rec2.data()), static_cast<std::streamsize>(rec2.size()));
  }
  LabeledImageSet set = load_cifar_binary(file.string());
  CHECK(set.size() == 2);
  CHECK(set.labels[0] == 3);
  CHECK(set.labels[1] == 9);
  CHECK(set.images[0].height == 32);

  // byte-exact round trip through the decoded pixels
  auto re1 = encode_cifar_record(set.images[0], {set.labels[0]});
  CHECK(re1 == rec1);

  // out-of-range label byte
  fs::path bad = tmp.path / "bad.bin";
  {
    auto rec = encode_cifar_record(img1, {200});
    std::ofstream out(bad, std::ios::binary);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(load_cifar_binary(bad.string(), CifarVariant::kCifar10)),
                       doctest::Contains("label byte"), std::runtime_error);
}

TEST_CASE("cifar loader reports the byte offset of truncation") {
  TempDir tmp;
  fs::path file = tmp.path / "trunc.bin";
  {
    Image img(32, 32);
    auto rec = encode_cifar_record(img, {1});
    std::ofstream out(file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    out.write("\x01\x02\x03", 3);  // dangling partial record
  }
  try {
    load_cifar_binary(file.string(), CifarVariant::kCifar10);
    FAIL("expected truncation error");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("byte offset") != std::string::npos);
    CHECK(msg.find("3073") != std::string::npos);
  }
}

TEST_CASE("cifar-100 coarse labels come from the first byte") {
  TempDir tmp;
  Image img(32, 32);
  auto rec = encode_cifar_record(img, {14, 87});  // coarse, fine
  fs::path file = tmp.path / "c100.bin";
  {
    std::ofstream out(file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  LabeledImageSet coarse = load_cifar_binary(file.string(), CifarVariant::kCifar100Coarse);
  CHECK(coarse.labels[0] == 14);
  CHECK(coarse.classes == 20);
  LabeledImageSet fine = load_cifar_binary(file.string(), CifarVariant::kCifar100Fine);
  CHECK(fine.labels[0] == 87);
  CHECK(fine.classes == 100);
}

TEST_CASE("synthetic set: counts, determinism and class separation") {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.per_class = 150;
  spec.noise = 0.0;
  LabeledImageSet set = make_synthetic(spec);
  CHECK(set.size() == 600);
  CHECK(set.classes == 4);
  std::vector<int> counts(4, 0);
  for (int l : set.labels) counts[static_cast<std::size_t>(l)]++;
  for (int c : counts) CHECK(c == 150);

  LabeledImageSet replay = make_synthetic(spec);
  for (std::size_t i = 0; i < set.size(); ++i) CHECK(replay.images[i].data == set.images[i].data);

  // two-class distance structure with zero noise
  SyntheticSpec two;
  two.classes = 2;
  two.per_class = 20;
  two.noise = 0.0;
  LabeledImageSet pair = make_synthetic(two);
  double intra = 0.0, inter = 0.0;
  int n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < pair.size(); ++i)
    for (std::size_t j = i + 1; j < pair.size(); ++j) {
      double d = mean_pixel_distance(pair.images[i], pair.images[j]);
      if (pair.labels[i] == pair.labels[j]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  CHECK(inter / n_inter > intra / n_intra);
}

TEST_CASE("synthetic classes survive the default augmentation policy") {
  SyntheticSpec spec;  // default 4 x 150, noise 0.05
  LabeledImageSet set = make_synthetic(spec);
  // class centroids in pixel space from the clean images
  std::vector<Image> centroids(4, Image(spec.resolution, spec.resolution));
  std::vector<int> counts(4, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& c = centroids[static_cast<std::size_t>(set.labels[i])];
    for (std::size_t p = 0; p < c.data.size(); ++p) c.data[p] += set.images[i].data[p];
    counts[static_cast<std::size_t>(set.labels[i])]++;
  }
  for (int k = 0; k < 4; ++k)
    for (auto& v : centroids[static_cast<std::size_t>(k)].data) v /= counts[static_cast<std::size_t>(k)];

  AugmentPolicy policy;
  policy.output_size = spec.resolution;
  int correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    Rng rng = derive_rng(991, static_cast<std::uint64_t>(i));
    Image aug = apply_policy(set.images[i], policy, rng);
    int best = -1;
    double best_d = 1e18;
    for (int k = 0; k < 4; ++k) {
      double d = 0.0;
      for (std::size_t p = 0; p < aug.data.size(); ++p) {
        double diff = aug.data[p] - centroids[static_cast<std::size_t>(k)].data[p];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best == set.labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(set.size()) >= 0.95);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec bad;
  bad.classes = 1;
  CHECK_THROWS_AS(make_synthetic(bad), std::invalid_argument);
  SyntheticSpec noisy;
  noisy.noise = 1.0;
  CHECK_THROWS_AS(make_synthetic(noisy), std::invalid_argument);
}
