#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lithopatch/error.hpp"

namespace lithopatch {

/// Row-major interleaved image. Channel count is 3 for RGB content and 1 for
/// grayscale; the pixel (x, y) channel c lives at ((y * width) + x) * channels + c.
template <typename T>
class BasicImage {
 public:
  using value_type = T;

  BasicImage() = default;

  BasicImage(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0 || channels <= 0)
      throw Error(ErrorCode::DimensionMismatch, "image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  BasicImage(int width, int height, int channels, std::vector<T> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    if (width <= 0 || height <= 0 || channels <= 0)
      throw Error(ErrorCode::DimensionMismatch, "image dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(width) * height * channels)
      throw Error(ErrorCode::DimensionMismatch,
                  "data length " + std::to_string(data_.size()) + " does not match " +
                      std::to_string(width) + "x" + std::to_string(height) + "x" +
                      std::to_string(channels));
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  /// Square side; only meaningful for patches.
  int size() const noexcept { return width_; }
  bool is_square() const noexcept { return width_ == height_; }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  bool operator==(const BasicImage&) const = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// Real-valued image; RGB content is normalized to [0,1] per channel.
using Image = BasicImage<double>;
/// 8-bit storage, the bit depth of every ingested source.
using Image8 = BasicImage<std::uint8_t>;
/// A square image.
using Patch = Image;

class SegmentationMask {
 public:
  SegmentationMask() = default;
  SegmentationMask(int width, int height, bool fill = false)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {
    if (width <= 0 || height <= 0)
      throw Error(ErrorCode::DimensionMismatch, "mask dimensions must be positive");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { data_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
  }

  bool operator==(const SegmentationMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// v / 255 per channel.
inline Image to_unit(const Image8& src) {
  std::vector<double> out(src.data().size());
  std::transform(src.data().begin(), src.data().end(), out.begin(),
                 [](std::uint8_t v) { return v / 255.0; });
  return Image(src.width(), src.height(), src.channels(), std::move(out));
}

/// Quantizes [0,1] values to 8 bits (round half up, clamped).
inline Image8 to_8bit(const Image& src) {
  std::vector<std::uint8_t> out(src.data().size());
  std::transform(src.data().begin(), src.data().end(), out.begin(), [](double v) {
    const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    return static_cast<std::uint8_t>(q);
  });
  return Image8(src.width(), src.height(), src.channels(), std::move(out));
}

template <typename T>
BasicImage<T> crop(const BasicImage<T>& src, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > src.width() || y0 + h > src.height())
    throw Error(ErrorCode::DimensionMismatch, "crop window outside image bounds");
  BasicImage<T> out(w, h, src.channels());
  const int c = src.channels();
  for (int y = 0; y < h; ++y) {
    const auto row = src.data().subspan(
        (static_cast<std::size_t>(y0 + y) * src.width() + x0) * c, static_cast<std::size_t>(w) * c);
    std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(y) * w * c);
  }
  return out;
}

/// Throws unless the image is 3-channel with every value in [0,1].
inline void validate_rgb(const Image& img) {
  if (img.channels() != 3) throw Error(ErrorCode::DimensionMismatch, "expected an RGB image");
  for (double v : img.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw Error(ErrorCode::NonFiniteValue, "RGB channel value outside [0,1]");
}

}  // namespace lithopatch
