#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "lithopatch/error.hpp"
#include "lithopatch/image.hpp"

namespace lithopatch {

/// Circular LBP with the rotation-invariant uniform (riu2) mapping.
///
/// Bit p is set when the p-th neighbour sampled at radius R is >= the centre.
/// Uniform codes (at most two circular 0/1 transitions) map to their bit count
/// 0..P, all other codes to bin P+1. Pixels closer than ceil(R) to the border
/// are not counted. The returned histogram is L1-normalized.
///
/// Neighbour values are interpolated bilinearly as differences to the centre,
/// with the four weighted terms summed in sorted order; together with the
/// snapped sampling offsets this makes the histogram exactly invariant to
/// lattice rotations and flips of the patch.
class LbpRiu2 {
 public:
  explicit LbpRiu2(int neighbors = 8, double radius = 1.0) : neighbors_(neighbors), radius_(radius) {
    if (neighbors < 1 || neighbors > 32) throw Error(ErrorCode::DimensionMismatch, "LBP neighbors must be in [1, 32]");
    if (!(radius > 0.0)) throw Error(ErrorCode::DimensionMismatch, "LBP radius must be positive");
    margin_ = static_cast<int>(std::ceil(radius - 1e-12));
    for (int p = 0; p < neighbors; ++p) {
      const double a = 2.0 * std::numbers::pi * p / neighbors;
      Sample s;
      const double dx = snap(radius * std::cos(a));
      const double dy = snap(-radius * std::sin(a));
      s.ix = static_cast<int>(std::floor(dx));
      s.iy = static_cast<int>(std::floor(dy));
      const double fx = dx - s.ix, fy = dy - s.iy;
      s.w = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
      samples_.push_back(s);
    }
  }

  int bins() const noexcept { return neighbors_ + 2; }

  int bin_of(std::uint32_t code) const {
    const int p = neighbors_;
    const std::uint32_t mask = p == 32 ? 0xffffffffu : ((1u << p) - 1u);
    const std::uint32_t rotated = ((code >> 1) | (code << (p - 1))) & mask;
    const int transitions = std::popcount((code ^ rotated) & mask);
    return transitions <= 2 ? std::popcount(code & mask) : p + 1;
  }

  /// Raw riu2 bin for the pixel at (x, y); (x, y) must be an interior pixel.
  int pixel_bin(const Image& gray, int x, int y) const {
    const double c = gray.at(x, y);
    std::uint32_t code = 0;
    for (int p = 0; p < neighbors_; ++p) {
      const Sample& s = samples_[p];
      std::array<double, 4> terms{};
      const int xs[4] = {x + s.ix, x + s.ix + 1, x + s.ix, x + s.ix + 1};
      const int ys[4] = {y + s.iy, y + s.iy, y + s.iy + 1, y + s.iy + 1};
      for (int k = 0; k < 4; ++k) terms[k] = s.w[k] == 0.0 ? 0.0 : s.w[k] * (gray.at(xs[k], ys[k]) - c);
      std::sort(terms.begin(), terms.end());
      const double diff = ((terms[0] + terms[1]) + terms[2]) + terms[3];
      if (diff >= -kTieTolerance) code |= 1u << p;
    }
    return bin_of(code);
  }

  std::vector<double> histogram(const Image& gray) const {
    if (gray.channels() != 1) throw Error(ErrorCode::DimensionMismatch, "LBP expects a single-channel patch");
    if (gray.width() <= 2 * radius_ || gray.height() <= 2 * radius_)
      throw Error(ErrorCode::PatchTooSmall, "patch side must exceed 2R");
    std::vector<double> hist(bins(), 0.0);
    std::vector<std::uint64_t> counts(bins(), 0);
    std::uint64_t total = 0;
    for (int y = margin_; y < gray.height() - margin_; ++y)
      for (int x = margin_; x < gray.width() - margin_; ++x) {
        ++counts[pixel_bin(gray, x, y)];
        ++total;
      }
    if (total == 0) throw Error(ErrorCode::PatchTooSmall, "patch has no interior pixels");
    for (int b = 0; b < bins(); ++b) hist[b] = static_cast<double>(counts[b]) / static_cast<double>(total);
    return hist;
  }

  /// Neighbour differences closer to zero than this count as ties (bit 1).
  static constexpr double kTieTolerance = 1e-12;

 private:
  struct Sample {
    int ix = 0, iy = 0;
    std::array<double, 4> w{};  // (ix,iy) (ix+1,iy) (ix,iy+1) (ix+1,iy+1)
  };

  // cos/sin of symmetric angles can differ in the last ulp; snap to 2^-40.
  static double snap(double v) { return std::round(v * 0x1.0p40) * 0x1.0p-40; }

  int neighbors_;
  double radius_;
  int margin_ = 1;
  std::vector<Sample> samples_;
};

/// riu2 LBP histogram of a grayscale patch, P + 2 bins summing to 1.
inline std::vector<double> lbp_riu2(const Image& gray, int neighbors = 8, double radius = 1.0) {
  return LbpRiu2(neighbors, radius).histogram(gray);
}

}  // namespace lithopatch
