#include "tricluster/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tricluster {

namespace {

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(std::string("augment: ") + name + " must be in [0, 1]");
  }
}

Image resized_crop(const Image& src, const AugmentPolicy& policy, Rng& rng) {
  const double area = static_cast<double>(src.height) * src.width;
  int ch = src.height, cw = src.width;
  int y0 = 0, x0 = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = area * rng.uniform(policy.crop_scale_min, policy.crop_scale_max);
    double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    double ratio = std::exp(log_ratio);
    int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w >= 1 && h >= 1 && w <= src.width && h <= src.height) {
      ch = h;
      cw = w;
      y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.height - h + 1)));
      x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.width - w + 1)));
      break;
    }
  }
  return resize_bilinear(crop(src, y0, x0, ch, cw), policy.output_size, policy.output_size);
}

void horizontal_flip(Image& img) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width / 2; ++x) {
        std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
      }
}

void color_jitter(Image& img, const AugmentPolicy& policy, Rng& rng) {
  const double fb = rng.uniform(std::max(0.0, 1.0 - policy.jitter_brightness),
                                1.0 + policy.jitter_brightness);
  const double fc = rng.uniform(std::max(0.0, 1.0 - policy.jitter_contrast),
                                1.0 + policy.jitter_contrast);
  const double fs = rng.uniform(std::max(0.0, 1.0 - policy.jitter_saturation),
                                1.0 + policy.jitter_saturation);
  const double dh = rng.uniform(-policy.jitter_hue, policy.jitter_hue);

  // brightness
  for (auto& v : img.data) v = std::clamp(v * fb, 0.0, 1.0);
  // contrast around the mean luma
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      mean += luminance(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
  mean /= static_cast<double>(img.height) * img.width;
  for (auto& v : img.data) v = std::clamp(mean + fc * (v - mean), 0.0, 1.0);
  // saturation: blend with per-pixel luma
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double l = luminance(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = std::clamp(l + fs * (img.at(c, y, x) - l), 0.0, 1.0);
      }
    }
  // hue rotation
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double h, s, v;
      rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
      double r, g, b;
      hsv_to_rgb(h + dh, s, v, r, g, b);
      img.at(0, y, x) = std::clamp(r, 0.0, 1.0);
      img.at(1, y, x) = std::clamp(g, 0.0, 1.0);
      img.at(2, y, x) = std::clamp(b, 0.0, 1.0);
    }
}

void grayscale(Image& img) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double l = luminance(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
      img.at(0, y, x) = l;
      img.at(1, y, x) = l;
      img.at(2, y, x) = l;
    }
}

void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double w = std::exp(-0.5 * (i / sigma) * (i / sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (auto& w : kernel) w /= total;

  Image tmp = img;
  // horizontal pass, clamp-to-edge
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int xx = std::clamp(x + i, 0, img.width - 1);
          s += img.at(c, y, xx) * kernel[static_cast<std::size_t>(i + radius)];
        }
        tmp.at(c, y, x) = s;
      }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int yy = std::clamp(y + i, 0, img.height - 1);
          s += tmp.at(c, yy, x) * kernel[static_cast<std::size_t>(i + radius)];
        }
        img.at(c, y, x) = s;
      }
}

}  // namespace

void AugmentPolicy::validate() const {
  if (output_size <= 0) throw std::invalid_argument("augment: output_size must be positive");
  require_probability(crop_probability, "crop_probability");
  require_probability(flip_probability, "flip_probability");
  require_probability(jitter_probability, "jitter_probability");
  require_probability(grayscale_probability, "grayscale_probability");
  require_probability(blur_probability, "blur_probability");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw std::invalid_argument("augment: crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (jitter_brightness < 0.0 || jitter_contrast < 0.0 || jitter_saturation < 0.0 ||
      jitter_hue < 0.0 || jitter_hue > 0.5) {
    throw std::invalid_argument("augment: jitter strengths must be nonnegative (hue <= 0.5)");
  }
  if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
    throw std::invalid_argument("augment: blur sigma range must satisfy 0 < min <= max");
  }
}

Image apply_policy(const Image& img, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  if (img.height < 2 || img.width < 2) {
    throw std::invalid_argument("augment: image smaller than minimum crop size (2x2)");
  }
  Image out;
  if (rng.bernoulli(policy.crop_probability)) {
    out = resized_crop(img, policy, rng);
  } else {
    out = resize_bilinear(img, policy.output_size, policy.output_size);
  }
  if (rng.bernoulli(policy.flip_probability)) horizontal_flip(out);
  if (rng.bernoulli(policy.jitter_probability)) color_jitter(out, policy, rng);
  if (rng.bernoulli(policy.grayscale_probability)) grayscale(out);
  if (rng.bernoulli(policy.blur_probability)) {
    gaussian_blur(out, rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
  }
  clamp_pixels(out);
  return out;
}

ViewTriple make_views(const std::vector<Image>& batch, const AugmentPolicy& policy,
                      std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("augment: empty batch");
  policy.validate();
  ViewTriple views;
  views.a.reserve(batch.size());
  views.b.reserve(batch.size());
  views.c.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (int v = 0; v < 3; ++v) {
      Rng rng = derive_rng(seed, policy.seed, static_cast<std::uint64_t>(i),
                           static_cast<std::uint64_t>(v));
      Image out = apply_policy(batch[i], policy, rng);
      (v == 0 ? views.a : v == 1 ? views.b : views.c).push_back(std::move(out));
    }
  }
  return views;
}

}  // namespace tricluster
