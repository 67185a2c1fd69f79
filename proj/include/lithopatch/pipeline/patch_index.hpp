#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/augmentation.hpp"
#include "lithopatch/binary_io.hpp"
#include "lithopatch/color.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/manifest.hpp"
#include "lithopatch/parallel.hpp"
#include "lithopatch/patch_sampling.hpp"

namespace lithopatch::pipeline {

// A patch index stores provenance only; pixels are re-cut from the sources.

inline nlohmann::json origin_json(const PatchOrigin& origin) {
  return std::visit(
      [](const auto& o) -> nlohmann::json {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, GridOrigin>)
          return {{"kind", "grid"}, {"x", o.x}, {"y", o.y}};
        else if constexpr (std::is_same_v<T, RandomOrigin>)
          return {{"kind", "random"}, {"x", o.x}, {"y", o.y}};
        else
          return {{"kind", "augmented"}, {"parent_id", o.parent_id}, {"copy_index", o.copy_index},
                  {"transform", to_json(o.transform)}};
      },
      origin);
}

inline PatchOrigin origin_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "grid") return GridOrigin{j.at("x").get<int>(), j.at("y").get<int>()};
  if (kind == "random") return RandomOrigin{j.at("x").get<int>(), j.at("y").get<int>()};
  if (kind == "augmented")
    return AugmentedOrigin{j.at("parent_id").get<std::string>(), j.at("copy_index").get<int>(),
                           transform_from_json(j.at("transform"))};
  throw Error(ErrorCode::MalformedFile, "unknown patch origin '" + kind + "'");
}

struct PatchIndex {
  int patch_size = 256;
  double fill = 0.0;  ///< warp fill for augmented entries
  PatchDataset dataset;  ///< records without pixels
};

inline nlohmann::json to_json(const PatchIndex& index) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : index.dataset.records)
    records.push_back({{"id", r.id},
                       {"source_image_id", r.source_image_id},
                       {"class", std::string(class_name(r.label))},
                       {"view", std::string(view_name(r.view))},
                       {"origin", origin_json(r.origin)}});
  nlohmann::json lineage = nlohmann::json::array();
  for (const auto& s : index.dataset.seed_lineage) lineage.push_back({{"stage", s.stage}, {"seed", s.seed}});
  const auto counts = index.dataset.class_counts();
  nlohmann::json per_class = nlohmann::json::object();
  for (int k = 0; k < kNumClasses; ++k) per_class[std::string(class_name(k))] = counts[k];
  return {{"patch_size", index.patch_size}, {"fill", index.fill},      {"count", index.dataset.records.size()},
          {"class_counts", per_class},      {"seed_lineage", lineage}, {"records", records}};
}

inline PatchIndex patch_index_from_json(const nlohmann::json& j) {
  PatchIndex index;
  try {
    index.patch_size = j.at("patch_size").get<int>();
    index.fill = j.value("fill", 0.0);
    for (const auto& s : j.at("seed_lineage"))
      index.dataset.seed_lineage.push_back({s.at("stage").get<std::string>(), s.at("seed").get<std::uint64_t>()});
    for (const auto& r : j.at("records")) {
      PatchRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.source_image_id = r.at("source_image_id").get<std::string>();
      rec.label = parse_class(r.at("class").get<std::string>());
      rec.view = parse_view(r.at("view").get<std::string>());
      rec.origin = origin_from_json(r.at("origin"));
      index.dataset.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("patch index: ") + e.what());
  }
  return index;
}

inline void save_patch_index(const std::filesystem::path& path, const PatchIndex& index) {
  io::write_text_atomically(path, to_json(index).dump(1) + "\n");
}

inline PatchIndex load_patch_index(const std::filesystem::path& path) {
  try {
    return patch_index_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

using SourceMap = std::map<std::string, SourceImage>;

/// Decodes every manifest entry (in parallel) keyed by image id.
inline SourceMap load_sources(const Manifest& manifest) {
  std::vector<SourceImage> loaded(manifest.entries.size());
  parallel_for(loaded.size(), [&](std::size_t i) { loaded[i] = load_source(manifest, manifest.entries[i]); });
  SourceMap map;
  for (auto& s : loaded) map.emplace(s.id, std::move(s));
  return map;
}

/// Re-creates pixels for index records: crops for grid/random origins, crop of
/// the parent followed by its warp for augmented ones.
class Materializer {
 public:
  Materializer(const SourceMap& sources, const PatchIndex& index) : sources_(sources), index_(index) {
    for (const auto& r : index.dataset.records) by_id_.emplace(r.id, &r);
  }

  Image8 pixels(const PatchRecord& r) const {
    if (const auto* a = std::get_if<AugmentedOrigin>(&r.origin)) {
      const auto it = by_id_.find(a->parent_id);
      if (it == by_id_.end()) throw Error(ErrorCode::MalformedFile, "patch " + r.id + " has no parent " + a->parent_id);
      return warp(pixels(*it->second), a->transform, index_.fill);
    }
    const auto src = sources_.find(r.source_image_id);
    if (src == sources_.end()) throw Error(ErrorCode::MissingArtifact, "source image " + r.source_image_id + " not in manifest");
    const auto [x, y] = std::visit(
        [](const auto& o) -> std::pair<int, int> {
          if constexpr (std::is_same_v<std::decay_t<decltype(o)>, AugmentedOrigin>)
            return {0, 0};
          else
            return {o.x, o.y};
        },
        r.origin);
    return crop(src->second.image, x, y, index_.patch_size, index_.patch_size);
  }

 private:
  const SourceMap& sources_;
  const PatchIndex& index_;
  std::map<std::string, const PatchRecord*> by_id_;
};

/// Per-patch feature vector; with `whiten` each channel is standardized, clipped
/// to +-3 sigma and mapped back to [0,1] before featurization.
inline std::vector<double> patch_features(const Image8& patch, bool whiten) {
  if (!whiten) return featurize(patch).values;
  Image w = whiten_patch(to_unit(patch));
  for (double& v : w.data()) v = (std::clamp(v, -3.0, 3.0) + 3.0) / 6.0;
  return featurize(w).values;
}

}  // namespace lithopatch::pipeline
