#include "tricluster/data.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "tricluster/rng.hpp"

namespace fs = std::filesystem;

namespace tricluster {

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Image decode_image_file(const std::string& file) {
  cv::Mat mat = cv::imread(file, cv::IMREAD_COLOR);
  if (mat.empty()) {
    throw std::runtime_error("data: failed to decode image file: " + file);
  }
  Image img(mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      const auto& px = mat.at<cv::Vec3b>(y, x);  // BGR
      img.at(0, y, x) = px[2] / 255.0;
      img.at(1, y, x) = px[1] / 255.0;
      img.at(2, y, x) = px[0] / 255.0;
    }
  }
  return img;
}

}  // namespace

LabeledImageSet load_image_folder(const std::string& path, int resolution) {
  if (!fs::is_directory(path)) throw std::runtime_error("data: not a directory: " + path);
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("data: no class subdirectories in " + path);

  LabeledImageSet set;
  set.classes = static_cast<int>(class_dirs.size());
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[k])) {
      if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw std::runtime_error("data: empty class directory: " + class_dirs[k].string());
    }
    for (const auto& f : files) {
      set.images.push_back(resize_bilinear(decode_image_file(f.string()), resolution, resolution));
      set.labels.push_back(static_cast<int>(k));
    }
  }
  return set;
}

LabeledImageSet load_cifar_binary(const std::string& path, CifarVariant variant) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("data: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.empty()) throw std::runtime_error("data: empty CIFAR file: " + path);

  constexpr std::size_t kPixels = 3072;
  std::size_t record = 0;
  if (variant == CifarVariant::kAuto) {
    if (bytes.size() % (kPixels + 1) == 0) {
      variant = CifarVariant::kCifar10;
    } else if (bytes.size() % (kPixels + 2) == 0) {
      variant = CifarVariant::kCifar100Coarse;
    } else {
      throw std::runtime_error("data: CIFAR format error in " + path + ": size " +
                               std::to_string(bytes.size()) + " fits no record layout");
    }
  }
  const bool two_label_bytes = variant != CifarVariant::kCifar10;
  record = kPixels + (two_label_bytes ? 2 : 1);
  if (bytes.size() % record != 0) {
    std::size_t offset = (bytes.size() / record) * record;
    throw std::runtime_error("data: CIFAR format error in " + path + ": truncated record at byte offset " +
                             std::to_string(offset));
  }

  const int label_limit = variant == CifarVariant::kCifar10     ? 10
                          : variant == CifarVariant::kCifar100Coarse ? 20
                                                                      : 100;
  LabeledImageSet set;
  set.classes = label_limit;
  const std::size_t n = bytes.size() / record;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * record;
    int label;
    if (variant == CifarVariant::kCifar10) {
      label = rec[0];
    } else if (variant == CifarVariant::kCifar100Coarse) {
      label = rec[0];
    } else {
      label = rec[1];
    }
    if (label >= label_limit) {
      throw std::runtime_error("data: CIFAR format error in " + path + ": label byte " +
                               std::to_string(label) + " out of range at record " + std::to_string(r));
    }
    const std::uint8_t* px = rec + (two_label_bytes ? 2 : 1);
    Image img(32, 32);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 1024; ++i) {
        img.data[static_cast<std::size_t>(c) * 1024 + i] = px[c * 1024 + i] / 255.0;
      }
    set.images.push_back(std::move(img));
    set.labels.push_back(label);
  }
  return set;
}

std::vector<std::uint8_t> encode_cifar_record(const Image& img, const std::vector<int>& label_bytes) {
  if (img.height != 32 || img.width != 32) {
    throw std::invalid_argument("data: CIFAR records are 32x32");
  }
  std::vector<std::uint8_t> out;
  out.reserve(label_bytes.size() + 3072);
  for (int b : label_bytes) out.push_back(static_cast<std::uint8_t>(b));
  for (double v : img.data) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

LabeledImageSet resize_dataset(const LabeledImageSet& set, int resolution) {
  LabeledImageSet out;
  out.labels = set.labels;
  out.classes = set.classes;
  out.split = set.split;
  out.images.reserve(set.images.size());
  for (const auto& img : set.images) out.images.push_back(resize_bilinear(img, resolution, resolution));
  return out;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic: classes must be >= 2");
  if (per_class < 1) throw std::invalid_argument("synthetic: per_class must be >= 1");
  if (resolution < 4) throw std::invalid_argument("synthetic: resolution must be >= 4");
  if (noise < 0.0 || noise >= 1.0) throw std::invalid_argument("synthetic: noise must be in [0, 1)");
  if (!hues.empty() && static_cast<int>(hues.size()) != classes) {
    throw std::invalid_argument("synthetic: hues must list one value per class");
  }
}

LabeledImageSet make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  LabeledImageSet set;
  set.classes = spec.classes;
  // Each class pairs a hue with a brightness shape: vertical ramps (up/down)
  // and horizontal peak/valley bands. Shape direction survives brightness,
  // contrast and grayscale changes; any crop of a vertical ramp stays a
  // vertical ramp, and crops of the horizontal shapes stay orthogonal to it,
  // so a pixel-space nearest-centroid classifier separates augmented images.
  std::vector<double> hues = spec.hues;
  if (hues.empty()) {
    if (spec.classes == 4) {
      hues = {0.75, 0.0, 0.5, 0.25};
    } else {
      for (int k = 0; k < spec.classes; ++k) hues.push_back(static_cast<double>(k) / spec.classes);
    }
  }
  for (int k = 0; k < spec.classes; ++k) {
    const double hue = hues[static_cast<std::size_t>(k)];
    for (int s = 0; s < spec.per_class; ++s) {
      Rng rng = derive_rng(spec.seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(s));
      const double gain = rng.uniform(0.92, 1.08);  // small per-image exposure variation
      const int phase = static_cast<int>(rng.below(4));
      Image img(spec.resolution, spec.resolution);
      for (int y = 0; y < spec.resolution; ++y) {
        const double ty = static_cast<double>(y) / (spec.resolution - 1);
        for (int x = 0; x < spec.resolution; ++x) {
          const double tx = static_cast<double>(x) / (spec.resolution - 1);
          const double band = 1.0 - std::abs(2.0 * tx - 1.0);
          double value;
          switch (k % 4) {
            case 0: value = 0.05 + 0.95 * ty; break;
            case 1: value = 1.00 - 0.95 * ty; break;
            case 2: value = 0.05 + 0.95 * band; break;
            default: value = 1.00 - 0.95 * band; break;
          }
          const int coord = (k % 2 == 0) ? y : x;
          const double ripple = ((coord + phase) / 2 % 2 == 0) ? 0.02 : -0.02;
          double r, g, b;
          hsv_to_rgb(hue, 0.75, std::clamp(value + ripple, 0.02, 1.0), r, g, b);
          const double base[3] = {r, g, b};
          for (int c = 0; c < 3; ++c) {
            double v = base[c] * gain + rng.uniform(-0.5, 0.5) * spec.noise;
            img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
          }
        }
      }
      set.images.push_back(std::move(img));
      set.labels.push_back(k);
    }
  }
  return set;
}

}  // namespace tricluster
