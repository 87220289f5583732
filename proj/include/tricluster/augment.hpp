#pragma once

#include <cstdint>
#include <vector>

#include "tricluster/image.hpp"
#include "tricluster/rng.hpp"

namespace tricluster {

// Stochastic view pipeline: ResizedCrop, HorizontalFlip, ColorJitter,
// Grayscale, GaussianBlur, each adopted independently with its own
// probability. Outputs are resized to output_size and clamped to [0, 1].
struct AugmentPolicy {
  int output_size = 16;

  double crop_probability = 1.0;
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;

  double flip_probability = 0.5;

  double jitter_probability = 0.8;
  double jitter_brightness = 0.4;
  double jitter_contrast = 0.4;
  double jitter_saturation = 0.4;
  double jitter_hue = 0.1;

  double grayscale_probability = 0.2;

  double blur_probability = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  std::uint64_t seed = 0;  // extra salt mixed into view streams

  void validate() const;  // throws std::invalid_argument naming the bad field
};

// Three augmented versions of one batch, index-aligned with the source.
struct ViewTriple {
  std::vector<Image> a, b, c;
};

Image apply_policy(const Image& img, const AugmentPolicy& policy, Rng& rng);

// Draws three independent views per image. The RNG stream of view v of image
// i is derived from (seed, policy.seed, i, v), so a triple replays exactly
// and images may be processed in any order or in parallel.
ViewTriple make_views(const std::vector<Image>& batch, const AugmentPolicy& policy,
                      std::uint64_t seed);

}  // namespace tricluster
