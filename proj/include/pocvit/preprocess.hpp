#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "pocvit/image.hpp"

namespace pocvit {

// Parameters actually chosen by the adaptive preprocessing chain, kept for
// logging and reproducibility.
struct AttParams {
  double gamma = 1.0;    // in [0.2, 1.0]
  double sigma0 = 1.0;   // blur scale, pixels
  double sigma1 = 2.0;   // always 2*sigma0
  double tau = 0.0;      // truncation level
  double epsilon = 1e-8; // division guard
};

inline constexpr double kAceEpsilon = 1e-8;
inline constexpr double kSigmaPixelScale = 10.0;
inline constexpr double kSigmaPixelMin = 0.5;
inline constexpr double kSigmaPixelMax = 4.0;

inline double adaptive_gamma_exponent(double sigma) {
  return std::max(0.2, std::min(1.0, 1.0 - sigma));
}

// I_agc = I_n^gamma with gamma = max(0.2, min(1, 1-sigma)), sigma the
// population standard deviation of the normalized image.
inline std::pair<GrayImage, double> adaptive_gamma(const GrayImage& img) {
  for (double v : img.data)
    if (v < 0.0 || v > 1.0)
      throw std::invalid_argument("adaptive_gamma: values must lie in [0,1]");
  double gamma = adaptive_gamma_exponent(image_stddev(img));
  GrayImage out(img.width, img.height);
  if (gamma == 1.0)
    out.data = img.data;
  else
    for (size_t i = 0; i < img.size(); ++i) out.data[i] = std::pow(img.data[i], gamma);
  return {std::move(out), gamma};
}

// Intensity standard deviation mapped to a blur scale in pixels.
inline double sigma0_pixels(double sigma_intensity) {
  return std::clamp(sigma_intensity * kSigmaPixelScale, kSigmaPixelMin, kSigmaPixelMax);
}

// Difference of Gaussians with sigma0 derived from the image statistics and
// sigma1 = 2*sigma0.
inline std::pair<GrayImage, double> adaptive_dog(const GrayImage& img) {
  for (double v : img.data)
    if (v < 0.0 || v > 1.0)
      throw std::invalid_argument("adaptive_dog: values must lie in [0,1]");
  double s0 = sigma0_pixels(image_stddev(img));
  GrayImage g0 = gaussian_blur(img, s0);
  GrayImage g1 = gaussian_blur(img, 2.0 * s0);
  GrayImage out(img.width, img.height);
  for (size_t i = 0; i < img.size(); ++i) out.data[i] = g0.data[i] - g1.data[i];
  return {std::move(out), s0};
}

// Zero-mean unit-variance normalization of the DoG image, truncation at 1.5
// source standard deviations (tau expressed in the standardized units the
// clamp operates in), then min-max renormalization to [0,1].
inline std::pair<GrayImage, double> adaptive_contrast_equalize(const GrayImage& dog) {
  double mu = image_mean(dog);
  double sd = image_stddev(dog);
  double tau = 1.5 * sd / (sd + kAceEpsilon);
  GrayImage z(dog.width, dog.height);
  for (size_t i = 0; i < dog.size(); ++i) {
    double v = (dog.data[i] - mu) / (sd + kAceEpsilon);
    z.data[i] = std::clamp(v, -tau, tau);
  }
  return {normalize_image(z), tau};
}

// Full adaptive Tan-Triggs chain: normalize, gamma, DoG, contrast equalize.
inline std::pair<GrayImage, AttParams> tan_triggs_pipeline(const GrayImage& img) {
  GrayImage n = normalize_image(img);
  auto [agc, gamma] = adaptive_gamma(n);
  auto [dog, s0] = adaptive_dog(agc);
  auto [ace, tau] = adaptive_contrast_equalize(dog);
  AttParams p;
  p.gamma = gamma;
  p.sigma0 = s0;
  p.sigma1 = 2.0 * s0;
  p.tau = tau;
  p.epsilon = kAceEpsilon;
  return {std::move(ace), p};
}

}  // namespace pocvit
