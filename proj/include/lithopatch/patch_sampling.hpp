#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lithopatch/diagnostics.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/image.hpp"
#include "lithopatch/labels.hpp"
#include "lithopatch/random.hpp"
#include "lithopatch/transform.hpp"

namespace lithopatch {

struct GridOrigin {
  int x = 0, y = 0;
  bool operator==(const GridOrigin&) const = default;
};
struct RandomOrigin {
  int x = 0, y = 0;
  bool operator==(const RandomOrigin&) const = default;
};
struct AugmentedOrigin {
  std::string parent_id;
  int copy_index = 0;
  TransformDescriptor transform;
  bool operator==(const AugmentedOrigin&) const = default;
};
using PatchOrigin = std::variant<GridOrigin, RandomOrigin, AugmentedOrigin>;

/// A source image with its fragment mask and annotation.
struct SourceImage {
  std::string id;
  Image8 image;  // RGB
  SegmentationMask mask;
  StoneClass label = StoneClass::COM;
  View view = View::surface;
};

/// Square patch with its provenance. Pixels are kept at the 8-bit source depth.
struct PatchRecord {
  std::string id;
  Image8 patch;
  StoneClass label = StoneClass::COM;
  View view = View::surface;
  std::string source_image_id;
  PatchOrigin origin;

  bool operator==(const PatchRecord&) const = default;
};

struct SeedEntry {
  std::string stage;
  std::uint64_t seed = 0;
  bool operator==(const SeedEntry&) const = default;
};

struct PatchDataset {
  std::vector<PatchRecord> records;
  std::vector<SeedEntry> seed_lineage;

  std::array<std::size_t, kNumClasses> class_counts() const {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& r : records) ++counts[class_index(r.label)];
    return counts;
  }

  bool operator==(const PatchDataset&) const = default;
};

/// Summed-area table over a mask for O(1) "square fully inside" queries.
class MaskIntegral {
 public:
  explicit MaskIntegral(const SegmentationMask& mask)
      : width_(mask.width()), height_(mask.height()),
        sums_(static_cast<std::size_t>(width_ + 1) * (height_ + 1), 0) {
    for (int y = 0; y < height_; ++y) {
      std::int64_t row = 0;
      for (int x = 0; x < width_; ++x) {
        row += mask.at(x, y) ? 1 : 0;
        sums_[idx(x + 1, y + 1)] = sums_[idx(x + 1, y)] + row;
      }
    }
  }

  std::int64_t count(int x, int y, int w, int h) const {
    return sums_[idx(x + w, y + h)] - sums_[idx(x, y + h)] - sums_[idx(x + w, y)] + sums_[idx(x, y)];
  }

  bool square_inside(int x, int y, int size) const {
    if (x < 0 || y < 0 || x + size > width_ || y + size > height_) return false;
    return count(x, y, size, size) == static_cast<std::int64_t>(size) * size;
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * (width_ + 1) + x; }

  int width_, height_;
  std::vector<std::int64_t> sums_;
};

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive
  bool empty() const noexcept { return x1 < x0; }
};

inline BoundingBox mask_bounds(const SegmentationMask& mask) {
  BoundingBox b{mask.width(), mask.height(), -1, -1};
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
  if (b.x1 < 0) return BoundingBox{};
  return b;
}

/// Grid lattice for one mask: stride = patch_size - max_overlap, anchored at the
/// top-left corner of the mask's bounding box.
struct PatchGrid {
  BoundingBox bounds;
  int patch_size = 0;
  int stride = 0;

  bool on_lattice(int x, int y) const {
    if (bounds.empty() || x < bounds.x0 || y < bounds.y0) return false;
    return (x - bounds.x0) % stride == 0 && (y - bounds.y0) % stride == 0;
  }
};

inline PatchGrid make_grid(const SegmentationMask& mask, int patch_size, int max_overlap) {
  if (patch_size <= 0) throw Error(ErrorCode::DimensionMismatch, "patch_size must be positive");
  if (max_overlap < 0 || max_overlap >= patch_size)
    throw Error(ErrorCode::DimensionMismatch, "max_overlap must satisfy 0 <= max_overlap < patch_size");
  return PatchGrid{mask_bounds(mask), patch_size, patch_size - max_overlap};
}

/// Origins (row-major) of grid squares lying entirely inside the mask.
inline std::vector<GridOrigin> grid_origins(const SegmentationMask& mask, int patch_size, int max_overlap = 20) {
  const PatchGrid grid = make_grid(mask, patch_size, max_overlap);
  std::vector<GridOrigin> out;
  if (grid.bounds.empty()) return out;
  const MaskIntegral integral(mask);
  for (int y = grid.bounds.y0; y + patch_size <= mask.height(); y += grid.stride)
    for (int x = grid.bounds.x0; x + patch_size <= mask.width(); x += grid.stride)
      if (integral.square_inside(x, y, patch_size)) out.push_back({x, y});
  return out;
}

inline std::string grid_patch_id(const std::string& image_id, int x, int y) {
  return image_id + "_g" + std::to_string(x) + "_" + std::to_string(y);
}

/// Scans the fragment region with a regular grid of square patches.
inline std::vector<PatchRecord> extract_grid_patches(const SourceImage& src, int patch_size, int max_overlap = 20) {
  if (src.image.width() != src.mask.width() || src.image.height() != src.mask.height())
    throw Error(ErrorCode::MaskImageMismatch,
                "image " + src.id + " is " + std::to_string(src.image.width()) + "x" +
                    std::to_string(src.image.height()) + ", mask is " + std::to_string(src.mask.width()) + "x" +
                    std::to_string(src.mask.height()));
  if (src.image.channels() != 3) throw Error(ErrorCode::DimensionMismatch, "source image must be RGB");

  const auto origins = grid_origins(src.mask, patch_size, max_overlap);
  if (mask_bounds(src.mask).empty()) {
    warn("EmptyMask: image " + src.id + " has no fragment pixels");
    return {};
  }
  std::vector<PatchRecord> out;
  out.reserve(origins.size());
  for (const auto& o : origins) {
    PatchRecord r;
    r.id = grid_patch_id(src.id, o.x, o.y);
    r.patch = crop(src.image, o.x, o.y, patch_size, patch_size);
    r.label = src.label;
    r.view = src.view;
    r.source_image_id = src.id;
    r.origin = o;
    out.push_back(std::move(r));
  }
  return out;
}

namespace detail {

// Keeps `keep` records of each listed class, removing the rest uniformly at
// random. Survivors retain their original order.
inline std::vector<PatchRecord> reduce_classes(std::vector<PatchRecord> records,
                                               const std::array<std::optional<std::size_t>, kNumClasses>& keep,
                                               Rng& rng) {
  std::vector<char> drop(records.size(), 0);
  for (int k = 0; k < kNumClasses; ++k) {
    if (!keep[k]) continue;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (class_index(records[i].label) == k) members.push_back(i);
    if (members.size() <= *keep[k]) continue;
    rng.shuffle(members);
    for (std::size_t j = *keep[k]; j < members.size(); ++j) drop[members[j]] = 1;
  }
  std::vector<PatchRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!drop[i]) out.push_back(std::move(records[i]));
  return out;
}

}  // namespace detail

/// Randomly removes patches until every class has the minimum class count.
inline PatchDataset downsample_classes(PatchDataset dataset, std::uint64_t seed) {
  const auto counts = dataset.class_counts();
  for (int k = 0; k < kNumClasses; ++k)
    if (counts[k] == 0)
      throw Error(ErrorCode::EmptyClass, "class " + std::string(class_name(k)) + " has no patches");
  const std::size_t target = *std::min_element(counts.begin(), counts.end());
  std::array<std::optional<std::size_t>, kNumClasses> keep;
  keep.fill(target);
  Rng rng(seed);
  dataset.records = detail::reduce_classes(std::move(dataset.records), keep, rng);
  dataset.seed_lineage.push_back({"downsample", seed});
  return dataset;
}

struct UpsampleOptions {
  std::optional<std::size_t> target_count;  ///< nullopt = current maximum class count
  int patch_size = 256;
  int max_overlap = 20;
  int max_attempts_per_patch = 10000;
};

/// Tops minority classes up with patches cut at random off-grid positions that lie
/// fully inside a fragment mask. With an explicit target below the current
/// maximum, larger classes are first reduced at random.
inline PatchDataset upsample_classes(PatchDataset dataset, const std::vector<SourceImage>& sources,
                                     const UpsampleOptions& options, std::uint64_t seed) {
  auto counts = dataset.class_counts();
  const std::size_t max_count = *std::max_element(counts.begin(), counts.end());
  const std::size_t target = options.target_count.value_or(max_count);
  Rng rng(seed);

  if (target < max_count) {
    std::array<std::optional<std::size_t>, kNumClasses> keep;
    for (int k = 0; k < kNumClasses; ++k)
      if (counts[k] > target) keep[k] = target;
    dataset.records = detail::reduce_classes(std::move(dataset.records), keep, rng);
    counts = dataset.class_counts();
  }

  struct Candidate {
    const SourceImage* source;
    MaskIntegral integral;
    PatchGrid grid;
  };

  std::size_t serial = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    if (counts[k] >= target) continue;
    std::vector<Candidate> candidates;
    for (const auto& s : sources)
      if (class_index(s.label) == k) {
        if (s.image.width() != s.mask.width() || s.image.height() != s.mask.height())
          throw Error(ErrorCode::MaskImageMismatch, "image " + s.id);
        candidates.push_back({&s, MaskIntegral(s.mask), make_grid(s.mask, options.patch_size, options.max_overlap)});
      }
    if (candidates.empty())
      throw Error(ErrorCode::InsufficientArea,
                  "no source images available for class " + std::string(class_name(k)));

    for (std::size_t need = target - counts[k]; need > 0; --need) {
      bool placed = false;
      for (int attempt = 0; attempt < options.max_attempts_per_patch && !placed; ++attempt) {
        const Candidate& c = candidates[rng.index(candidates.size())];
        const int span_x = c.integral.width() - options.patch_size;
        const int span_y = c.integral.height() - options.patch_size;
        if (span_x < 0 || span_y < 0) continue;
        const int x = static_cast<int>(rng.index(static_cast<std::uint64_t>(span_x) + 1));
        const int y = static_cast<int>(rng.index(static_cast<std::uint64_t>(span_y) + 1));
        if (c.grid.on_lattice(x, y) || !c.integral.square_inside(x, y, options.patch_size)) continue;

        PatchRecord r;
        r.id = c.source->id + "_r" + std::to_string(serial++);
        r.patch = crop(c.source->image, x, y, options.patch_size, options.patch_size);
        r.label = c.source->label;
        r.view = c.source->view;
        r.source_image_id = c.source->id;
        r.origin = RandomOrigin{x, y};
        dataset.records.push_back(std::move(r));
        placed = true;
      }
      if (!placed)
        throw Error(ErrorCode::InsufficientArea,
                    "no off-grid position found for class " + std::string(class_name(k)) + " after " +
                        std::to_string(options.max_attempts_per_patch) + " attempts");
    }
  }
  dataset.seed_lineage.push_back({"upsample", seed});
  return dataset;
}

}  // namespace lithopatch
