#pragma once

#include <vector>

namespace tricluster {

// 3-channel image, planar CHW layout, pixel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // size 3 * height * width

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Bilinear resize; same-size calls return an exact copy.
Image resize_bilinear(const Image& src, int out_h, int out_w);

// Crop the rectangle [y0, y0+h) x [x0, x0+w) (must lie inside the image).
Image crop(const Image& src, int y0, int x0, int h, int w);

void clamp_pixels(Image& img);

// Hue/saturation/value conversions used by color jitter; h in [0, 1).
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

// Rec. 601 luma.
double luminance(double r, double g, double b);

}  // namespace tricluster
