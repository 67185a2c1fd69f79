#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "lithopatch/error.hpp"
#include "lithopatch/image.hpp"

namespace lithopatch {

struct Hsi {
  double h = 0.0;  ///< degrees in [0, 360)
  double s = 0.0;  ///< [0, 1]
  double i = 0.0;  ///< [0, 1]
};

/// RGB (each in [0,1]) to hue/saturation/intensity.
///
/// Hue uses the atan2 form of the arccos definition,
///   theta = acos(((r-g)+(r-b)) / (2 sqrt((r-g)^2 + (r-b)(g-b)))), h = b <= g ? theta : 360 - theta,
/// which is the same angle but stays well conditioned near 0 and 180 degrees.
/// Achromatic pixels (s == 0) get h = 0; black pixels get s = 0.
inline Hsi rgb_to_hsi(double r, double g, double b) {
  Hsi out;
  out.i = (r + g + b) / 3.0;
  if (r == g && g == b) {
    out.i = r;
    return out;
  }
  if (out.i > 0.0) out.s = 1.0 - std::min({r, g, b}) / out.i;
  if (out.s <= 0.0) {
    out.s = 0.0;
    return out;
  }
  double h = std::atan2(std::numbers::sqrt3 * (g - b), (r - g) + (r - b)) * (180.0 / std::numbers::pi);
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h = 0.0;
  out.h = h;
  return out;
}

/// BT.601 luma: 0.299 r + 0.587 g + 0.114 b.
inline Image to_grayscale(const Image& rgb) {
  if (rgb.channels() != 3) throw Error(ErrorCode::DimensionMismatch, "to_grayscale expects 3 channels");
  Image gray(rgb.width(), rgb.height(), 1);
  auto src = rgb.data();
  auto dst = gray.data();
  for (std::size_t p = 0; p < dst.size(); ++p) {
    const double v = 0.299 * src[3 * p] + 0.587 * src[3 * p + 1] + 0.114 * src[3 * p + 2];
    dst[p] = std::clamp(v, 0.0, 1.0);
  }
  return gray;
}

enum class DegeneratePolicy {
  substitute_unit_sigma,  ///< sigma := 1 for constant channels
  raise,                  ///< throw DegenerateChannel
};

/// Per-channel standardization (v - mean) / sigma with population statistics.
inline Image whiten_patch(const Image& patch, DegeneratePolicy policy = DegeneratePolicy::substitute_unit_sigma) {
  if (patch.empty()) throw Error(ErrorCode::DimensionMismatch, "cannot whiten an empty patch");
  const int nc = patch.channels();
  const std::size_t n = patch.pixel_count();
  auto src = patch.data();

  std::vector<double> mean(nc, 0.0), sigma(nc, 0.0);
  for (int c = 0; c < nc; ++c) {
    double sum = 0.0;
    bool constant = true;
    for (std::size_t p = 0; p < n; ++p) {
      sum += src[p * nc + c];
      constant = constant && src[p * nc + c] == src[c];
    }
    // the rounded mean of a constant channel can miss the value by an ulp
    mean[c] = constant ? src[c] : sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double d = src[p * nc + c] - mean[c];
      ss += d * d;
    }
    sigma[c] = std::sqrt(ss / static_cast<double>(n));
    if (sigma[c] == 0.0) {
      if (policy == DegeneratePolicy::raise)
        throw Error(ErrorCode::DegenerateChannel, "channel " + std::to_string(c) + " has zero variance");
      sigma[c] = 1.0;
    }
  }

  Image out(patch.width(), patch.height(), nc);
  auto dst = out.data();
  for (std::size_t p = 0; p < n; ++p)
    for (int c = 0; c < nc; ++c) dst[p * nc + c] = (src[p * nc + c] - mean[c]) / sigma[c];
  return out;
}

}  // namespace lithopatch
