#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lithopatch/image.hpp"
#include "lithopatch/image_io.hpp"
#include "lithopatch/labels.hpp"
#include "lithopatch/manifest.hpp"
#include "lithopatch/parallel.hpp"
#include "lithopatch/random.hpp"

namespace lithopatch {

struct FixtureOptions {
  int per_class_view = 5;
  int image_size = 960;
};

struct FixtureStyle {
  std::array<double, 3> rgb;  ///< base colour
  double period;              ///< texture period in pixels
  double angle_deg;           ///< stripe orientation (surface view)
};

/// COM red-brown, COD yellow, UA orange, BRU pale.
inline constexpr std::array<FixtureStyle, kNumClasses> kFixtureStyles = {{
    {{0.55, 0.33, 0.22}, 40.0, 0.0},
    {{0.85, 0.78, 0.35}, 24.0, 45.0},
    {{0.85, 0.55, 0.25}, 56.0, 90.0},
    {{0.82, 0.80, 0.76}, 32.0, 135.0},
}};

namespace detail {

// Bilinear value noise on a lattice with the given cell size.
class ValueNoise {
 public:
  ValueNoise(int size, int cell, Rng& rng) : cell_(cell), n_(size / cell + 2), v_(static_cast<std::size_t>(n_) * n_) {
    for (double& x : v_) x = rng.uniform();
  }
  double operator()(double x, double y) const {
    const double gx = x / cell_, gy = y / cell_;
    const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
    const double fx = gx - ix, fy = gy - iy;
    auto at = [&](int i, int j) { return v_[static_cast<std::size_t>(j) * n_ + i]; };
    return (1 - fy) * ((1 - fx) * at(ix, iy) + fx * at(ix + 1, iy)) + fy * ((1 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1));
  }

 private:
  int cell_, n_;
  std::vector<double> v_;
};

}  // namespace detail

/// One procedural fragment image and its elliptical mask. Surface views carry
/// oriented stripes, section views concentric rings; both at the class period.
inline SourceImage make_fixture_image(StoneClass label, View view, int index, std::uint64_t seed, int size = 960) {
  const auto& style = kFixtureStyles[static_cast<std::size_t>(class_index(label))];
  Rng rng(seed);
  const double half = size / 2.0;
  const double cx = half + rng.uniform(-0.02, 0.02) * size, cy = half + rng.uniform(-0.02, 0.02) * size;
  const double a = rng.uniform(0.417, 0.479) * size, b = rng.uniform(0.417, 0.479) * size;
  const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double angle = (style.angle_deg + rng.uniform(-5.0, 5.0)) * 3.14159265358979323846 / 180.0;
  const double brightness = rng.uniform(0.92, 1.05);
  detail::ValueNoise noise(size, 16, rng);

  SourceImage src;
  src.id = std::string(class_name(label)) + "_" + std::string(view_name(view)) + "_" + (index < 10 ? "0" : "") +
           std::to_string(index);
  src.label = label;
  src.view = view;
  src.image = Image8(size, size, 3);
  src.mask = SegmentationMask(size, size);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double k = 2.0 * 3.14159265358979323846 / style.period;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      const bool inside = (dx * dx) / (a * a) + (dy * dy) / (b * b) <= 1.0;
      src.mask.set(x, y, inside);
      double shade = 0.12;
      if (inside) {
        const double u = view == View::surface ? dx * ca + dy * sa : std::sqrt(dx * dx + dy * dy);
        const double wave = 0.5 + 0.5 * std::sin(k * u + phase);
        shade = brightness * (0.70 + 0.20 * wave + 0.10 * noise(x, y));
      }
      for (int c = 0; c < 3; ++c) {
        const double v = inside ? style.rgb[static_cast<std::size_t>(c)] * shade : shade;
        src.image.at(x, y, c) = static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
      }
    }
  return src;
}

/// Writes images/, masks/ and manifest.json under `out` for every class and view.
inline Manifest make_fixtures(const std::filesystem::path& out, std::uint64_t seed, const FixtureOptions& options = {}) {
  if (options.per_class_view < 1) throw Error(ErrorCode::ConfigInvalid, "per_class_view must be >= 1");
  if (options.image_size < 64) throw Error(ErrorCode::ConfigInvalid, "image_size must be >= 64");
  Manifest manifest;
  manifest.base_dir = out;
  struct Job {
    StoneClass label;
    View view;
    int index;
  };
  std::vector<Job> jobs;
  for (int c = 0; c < kNumClasses; ++c)
    for (View v : {View::surface, View::section})
      for (int i = 0; i < options.per_class_view; ++i) jobs.push_back({static_cast<StoneClass>(c), v, i});
  manifest.entries.resize(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto src = make_fixture_image(job.label, job.view, job.index, derive_seed(seed, {j}), options.image_size);
    ManifestEntry e;
    e.image_id = src.id;
    e.image_path = std::filesystem::path("images") / (src.id + ".png");
    e.mask_path = std::filesystem::path("masks") / (src.id + "_mask.png");
    e.label = job.label;
    e.view = job.view;
    write_png(out / e.image_path, src.image);
    write_mask(out / e.mask_path, src.mask);
    manifest.entries[j] = std::move(e);
  });
  save_manifest(out / "manifest.json", manifest);
  return manifest;
}

}  // namespace lithopatch
