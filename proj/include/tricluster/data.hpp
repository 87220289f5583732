#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tricluster/image.hpp"

namespace tricluster {

struct LabeledImageSet {
  std::vector<Image> images;
  std::vector<int> labels;  // in [0, classes)
  int classes = 0;
  std::string split = "train";

  std::size_t size() const { return images.size(); }
};

// Directory with one subdirectory per class, each holding PNG/JPEG files.
// Classes are ordered by directory name, files by name; pixels land in
// [0, 1] and every image is resized to `resolution`.
LabeledImageSet load_image_folder(const std::string& path, int resolution);

enum class CifarVariant { kAuto, kCifar10, kCifar100Coarse, kCifar100Fine };

// Standard CIFAR binary batches: per record, label byte(s) followed by 3072
// pixel bytes (R, G, B planes of a 32x32 image). Images keep their native
// resolution; use resize_dataset before training.
LabeledImageSet load_cifar_binary(const std::string& path,
                                  CifarVariant variant = CifarVariant::kAuto);

// One record in CIFAR layout; label_bytes is {label} or {coarse, fine}.
std::vector<std::uint8_t> encode_cifar_record(const Image& img,
                                              const std::vector<int>& label_bytes);

LabeledImageSet resize_dataset(const LabeledImageSet& set, int resolution);

// Synthetic desk-scale benchmark: each class pairs a dominant hue with a
// global stripe/checker pattern, so class identity survives crops, flips and
// moderate color jitter.
struct SyntheticSpec {
  int classes = 4;
  int per_class = 150;
  int resolution = 16;
  double noise = 0.05;            // per-pixel uniform noise amplitude, in [0, 1)
  std::uint64_t seed = 7;
  std::vector<double> hues;       // optional per-class hue override, values in [0, 1)

  void validate() const;
};

LabeledImageSet make_synthetic(const SyntheticSpec& spec);

}  // namespace tricluster
