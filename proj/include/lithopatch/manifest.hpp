#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/binary_io.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/image_io.hpp"
#include "lithopatch/labels.hpp"
#include "lithopatch/patch_sampling.hpp"

namespace lithopatch {

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path image_path;  ///< relative to the manifest directory unless absolute
  std::filesystem::path mask_path;
  StoneClass label = StoneClass::COM;
  View view = View::surface;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"image_id", e.image_id},
                       {"image_path", e.image_path.generic_string()},
                       {"mask_path", e.mask_path.generic_string()},
                       {"class", std::string(class_name(e.label))},
                       {"view", std::string(view_name(e.view))}});
  return {{"entries", entries}};
}

/// Accepts {"entries": [...]} or a bare array of entries.
inline Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  try {
    const auto& list = j.is_array() ? j : j.at("entries");
    std::set<std::string> ids;
    for (const auto& e : list) {
      ManifestEntry entry;
      entry.image_id = e.at("image_id").get<std::string>();
      entry.image_path = e.at("image_path").get<std::string>();
      entry.mask_path = e.at("mask_path").get<std::string>();
      entry.label = parse_class(e.at("class").get<std::string>());
      entry.view = parse_view(e.at("view").get<std::string>());
      if (!ids.insert(entry.image_id).second)
        throw Error(ErrorCode::MalformedFile, "duplicate image_id '" + entry.image_id + "'");
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("manifest: ") + e.what());
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "missing manifest " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(io::read_text(path)), path.parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  io::write_text_atomically(path, to_json(m).dump(2) + "\n");
}

inline std::filesystem::path resolve(const Manifest& m, const std::filesystem::path& p) {
  return p.is_absolute() ? p : m.base_dir / p;
}

inline SourceImage load_source(const Manifest& m, const ManifestEntry& e) {
  SourceImage src;
  src.id = e.image_id;
  src.image = read_image(resolve(m, e.image_path));
  src.mask = read_mask(resolve(m, e.mask_path));
  src.label = e.label;
  src.view = e.view;
  return src;
}

}  // namespace lithopatch
