#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pocvit {

// Single-channel floating point raster, row major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("GrayImage: non-positive size");
  }

  double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
};

inline double image_mean(const GrayImage& img) {
  double s = 0.0;
  for (double v : img.data) s += v;
  return s / static_cast<double>(img.size());
}

// Population standard deviation of pixel intensities. Exactly zero for a
// constant image (summation rounding would otherwise leak in).
inline double image_stddev(const GrayImage& img) {
  bool constant = true;
  for (double v : img.data) constant = constant && v == img.data[0];
  if (constant) return 0.0;
  double mu = image_mean(img);
  double s = 0.0;
  for (double v : img.data) s += (v - mu) * (v - mu);
  return std::sqrt(s / static_cast<double>(img.size()));
}

// Min-max rescale to [0,1]. A constant image maps to all zeros.
inline GrayImage normalize_image(const GrayImage& img) {
  if (img.empty()) throw std::invalid_argument("normalize_image: empty image");
  double lo = img.data[0], hi = img.data[0];
  for (double v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  GrayImage out(img.width, img.height);
  if (hi > lo) {
    double inv = 1.0 / (hi - lo);
    for (size_t i = 0; i < img.size(); ++i) out.data[i] = (img.data[i] - lo) * inv;
  }
  return out;
}

// Separable Gaussian convolution, reflect padding, kernel radius ceil(3*sigma),
// weights normalized to sum 1.
inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[i + radius] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  auto reflect = [](int i, int n) {
    // half-sample symmetric extension (abc|cba); keeps the blur operator
    // symmetric so the image mean is preserved exactly
    int period = 2 * n;
    i = ((i % period) + period) % period;
    return i < n ? i : period - 1 - i;
  };

  GrayImage tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * img.at(reflect(x + k, img.width), y);
      tmp.at(x, y) = acc;
    }
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[k + radius] * tmp.at(x, reflect(y + k, img.height));
      out.at(x, y) = acc;
    }
  return out;
}

}  // namespace pocvit
