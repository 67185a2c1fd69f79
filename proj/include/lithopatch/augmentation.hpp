#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/image.hpp"
#include "lithopatch/parallel.hpp"
#include "lithopatch/patch_sampling.hpp"
#include "lithopatch/random.hpp"
#include "lithopatch/transform.hpp"

namespace lithopatch {

/// Mirror a patch: horizontal maps (x, y) to (size-1-x, y), vertical to (x, size-1-y).
template <typename T>
BasicImage<T> flip(const BasicImage<T>& patch, FlipAxis axis) {
  BasicImage<T> out(patch.width(), patch.height(), patch.channels());
  for (int y = 0; y < patch.height(); ++y)
    for (int x = 0; x < patch.width(); ++x) {
      const int sx = axis == FlipAxis::horizontal ? patch.width() - 1 - x : x;
      const int sy = axis == FlipAxis::vertical ? patch.height() - 1 - y : y;
      for (int c = 0; c < patch.channels(); ++c) out.at(x, y, c) = patch.at(sx, sy, c);
    }
  return out;
}

/// Inverse-mapped bilinear warp. Each output pixel samples the source at
/// M^-1 (x, y); neighbours outside the patch contribute `fill`.
inline Image warp(const Image& patch, const TransformDescriptor& t, double fill = 0.0) {
  validate(t);
  const Mat3 inv = inverse(to_matrix(t, patch.width()));
  const int w = patch.width(), h = patch.height(), nc = patch.channels();
  Image out(w, h, nc);

  auto sample = [&](int x, int y, int c) { return (x < 0 || y < 0 || x >= w || y >= h) ? fill : patch.at(x, y, c); };

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double hx = inv[0] * x + inv[1] * y + inv[2];
      const double hy = inv[3] * x + inv[4] * y + inv[5];
      const double hw = inv[6] * x + inv[7] * y + inv[8];
      if (hw == 0.0) {
        for (int c = 0; c < nc; ++c) out.at(x, y, c) = fill;
        continue;
      }
      const double sx = hx / hw, sy = hy / hw;
      if (!(sx > -1.0 && sy > -1.0 && sx < w && sy < h)) {
        for (int c = 0; c < nc; ++c) out.at(x, y, c) = fill;
        continue;
      }
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < nc; ++c) {
        const double top = sample(x0, y0, c) * (1.0 - fx) + (fx == 0.0 ? 0.0 : sample(x0 + 1, y0, c) * fx);
        const double bot = fy == 0.0 ? 0.0
                                     : sample(x0, y0 + 1, c) * (1.0 - fx) +
                                           (fx == 0.0 ? 0.0 : sample(x0 + 1, y0 + 1, c) * fx);
        out.at(x, y, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  return out;
}

/// 8-bit convenience: warp in [0,1] and quantize back to the storage depth.
inline Image8 warp(const Image8& patch, const TransformDescriptor& t, double fill = 0.0) {
  return to_8bit(warp(to_unit(patch), t, fill));
}

inline TransformDescriptor rotation_about_center(double degrees, int size) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = (size - 1) / 2.0;
  const double ca = std::cos(a), sa = std::sin(a);
  return TransformDescriptor::affine({ca, -sa, c - ca * c + sa * c, sa, ca, c - sa * c - ca * c});
}

/// Homography taking the four `from` points onto the four `to` points.
inline Mat3 homography_from_points(const std::array<std::array<double, 2>, 4>& from,
                                   const std::array<std::array<double, 2>, 4>& to) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = from[i][0], y = from[i][1], u = to[i][0], v = to[i][1];
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> hvec = a.fullPivLu().solve(b);
  return {hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), 1.0};
}

/// Parameter ranges for random geometric augmentation.
struct AugmentConfig {
  double flip_probability = 0.5;  // per axis
  double rotation_min_deg = -25.0, rotation_max_deg = 25.0;
  double scale_min = 0.9, scale_max = 1.1;
  double shear_min_deg = -8.0, shear_max_deg = 8.0;
  double translate_min_px = -10.0, translate_max_px = 10.0;
  double perspective_probability = 0.5;
  double perspective_jitter = 0.05;  // fraction of the side, per corner coordinate
  double fill = 0.0;

  bool operator==(const AugmentConfig&) const = default;
};

inline nlohmann::json to_json(const AugmentConfig& c) {
  return {{"flip_probability", c.flip_probability},
          {"rotation_deg", {c.rotation_min_deg, c.rotation_max_deg}},
          {"scale", {c.scale_min, c.scale_max}},
          {"shear_deg", {c.shear_min_deg, c.shear_max_deg}},
          {"translate_px", {c.translate_min_px, c.translate_max_px}},
          {"perspective_probability", c.perspective_probability},
          {"perspective_jitter", c.perspective_jitter},
          {"fill", c.fill}};
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  AugmentConfig c;
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto r = j.at(key).get<std::array<double, 2>>();
    if (r[0] > r[1]) throw Error(ErrorCode::ConfigInvalid, std::string(key) + " range is reversed");
    lo = r[0];
    hi = r[1];
  };
  try {
    c.flip_probability = j.value("flip_probability", c.flip_probability);
    range("rotation_deg", c.rotation_min_deg, c.rotation_max_deg);
    range("scale", c.scale_min, c.scale_max);
    range("shear_deg", c.shear_min_deg, c.shear_max_deg);
    range("translate_px", c.translate_min_px, c.translate_max_px);
    c.perspective_probability = j.value("perspective_probability", c.perspective_probability);
    c.perspective_jitter = j.value("perspective_jitter", c.perspective_jitter);
    c.fill = j.value("fill", c.fill);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("augmentation config: ") + e.what());
  }
  if (c.scale_min <= 0.0) throw Error(ErrorCode::ConfigInvalid, "scale range must be positive");
  return c;
}

/// Draws flip(s) -> affine -> optional perspective, composed in that order.
inline TransformDescriptor random_transform(Rng& rng, int size, const AugmentConfig& cfg) {
  std::vector<TransformDescriptor> parts;
  if (rng.bernoulli(cfg.flip_probability)) parts.push_back(TransformDescriptor::flip(FlipAxis::horizontal));
  if (rng.bernoulli(cfg.flip_probability)) parts.push_back(TransformDescriptor::flip(FlipAxis::vertical));

  const double deg = std::numbers::pi / 180.0;
  const double rot = rng.uniform(cfg.rotation_min_deg, cfg.rotation_max_deg) * deg;
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double shear = rng.uniform(cfg.shear_min_deg, cfg.shear_max_deg) * deg;
  const double tx = rng.uniform(cfg.translate_min_px, cfg.translate_max_px);
  const double ty = rng.uniform(cfg.translate_min_px, cfg.translate_max_px);
  {
    // about the patch centre: T(c + t) R Sh S T(-c)
    const double c = (size - 1) / 2.0;
    const double cr = std::cos(rot), sr = std::sin(rot), sh = std::tan(shear);
    // R * Sh * S = [[cr, cr*sh - sr], [sr, sr*sh + cr]] * scale
    const double a = cr * scale, b = (cr * sh - sr) * scale;
    const double d = sr * scale, e = (sr * sh + cr) * scale;
    parts.push_back(TransformDescriptor::affine({a, b, c + tx - (a * c + b * c), d, e, c + ty - (d * c + e * c)}));
  }

  if (rng.bernoulli(cfg.perspective_probability)) {
    const double s = size - 1;
    const double j = cfg.perspective_jitter * size;
    std::array<std::array<double, 2>, 4> from = {{{0, 0}, {s, 0}, {s, s}, {0, s}}};
    auto to = from;
    for (auto& p : to) {
      p[0] += rng.uniform(-j, j);
      p[1] += rng.uniform(-j, j);
    }
    parts.push_back(TransformDescriptor::perspective(homography_from_points(from, to)));
  }
  return TransformDescriptor::composite(std::move(parts));
}

/// Transform of copy `copy_index` (>= 1) of record `record_index`; the random
/// stream depends only on (seed, record_index, copy_index).
inline TransformDescriptor augment_transform(std::size_t record_index, int copy_index, std::uint64_t seed, int size,
                                             const AugmentConfig& cfg) {
  Rng rng(derive_seed(seed, {record_index, static_cast<std::uint64_t>(copy_index)}));
  return random_transform(rng, size, cfg);
}

inline std::string augmented_patch_id(const std::string& parent_id, int copy_index) {
  return parent_id + "_a" + std::to_string(copy_index);
}

/// Copy `copy_index` of a record; copy 0 is the record itself.
inline PatchRecord augment_record(const PatchRecord& record, std::size_t record_index, int copy_index,
                                  std::uint64_t seed, const AugmentConfig& cfg) {
  if (copy_index == 0) return record;
  const TransformDescriptor t = augment_transform(record_index, copy_index, seed, record.patch.width(), cfg);
  PatchRecord out;
  out.id = augmented_patch_id(record.id, copy_index);
  out.patch = warp(record.patch, t, cfg.fill);
  out.label = record.label;
  out.view = record.view;
  out.source_image_id = record.source_image_id;
  out.origin = AugmentedOrigin{record.id, copy_index, t};
  return out;
}

/// Expands every record into `factor` copies (record-major order, original first).
inline PatchDataset augment_dataset(const PatchDataset& dataset, int factor, std::uint64_t seed,
                                    const AugmentConfig& cfg = {}) {
  if (factor < 1) throw Error(ErrorCode::ConfigInvalid, "augmentation factor must be >= 1");
  PatchDataset out;
  out.seed_lineage = dataset.seed_lineage;
  out.seed_lineage.push_back({"augment", seed});
  const std::size_t f = static_cast<std::size_t>(factor);
  out.records.resize(dataset.records.size() * f);
  parallel_for(out.records.size(), [&](std::size_t i) {
    const std::size_t r = i / f;
    out.records[i] = augment_record(dataset.records[r], r, static_cast<int>(i % f), seed, cfg);
  });
  return out;
}

}  // namespace lithopatch
