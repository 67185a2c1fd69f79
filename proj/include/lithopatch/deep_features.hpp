#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lithopatch/binary_io.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/labels.hpp"

namespace lithopatch {

inline constexpr const char* kDeepSchema = "deep-v1";

/// Embeddings emitted by an external backbone, one row per patch.
struct DeepFeatureSet {
  FeatureMatrix features;  ///< schema_id kDeepSchema
  std::string backbone_tag;
  std::vector<std::uint8_t> split;  ///< per row: 0 train, 1 val, 2 test; empty if unassigned

  /// Rows whose split assignment equals `part`.
  FeatureMatrix part(std::uint8_t p) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == p) idx.push_back(i);
    return features.subset(idx);
  }
};

// --- LPDF1: "LPDF1", u32 n, u32 d, f32 row-major data, u8 labels, u32 tag length, UTF-8 tag

inline void write_lpdf(std::ostream& os, const DeepFeatureSet& set) {
  const auto& m = set.features;
  os.write("LPDF1", 5);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) io::write_le<float>(os, static_cast<float>(v));
  for (int l : m.labels) io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(l));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.backbone_tag.size()));
  os.write(set.backbone_tag.data(), static_cast<std::streamsize>(set.backbone_tag.size()));
}

inline DeepFeatureSet read_lpdf(std::istream& is) {
  char magic[5];
  if (!is.read(magic, 5) || std::string(magic, 5) != "LPDF1") throw Error(ErrorCode::MalformedFile, "bad LPDF1 magic");
  DeepFeatureSet set;
  auto& m = set.features;
  m.schema_id = kDeepSchema;
  m.rows = io::read_le<std::uint32_t>(is, "row count");
  m.cols = io::read_le<std::uint32_t>(is, "column count");
  if (m.rows == 0 || m.cols == 0) throw Error(ErrorCode::MalformedFile, "empty data section");
  m.data.resize(m.rows * m.cols);
  for (double& v : m.data) v = io::read_le<float>(is, "feature data");
  m.labels.resize(m.rows);
  for (int& l : m.labels) l = io::read_le<std::uint8_t>(is, "labels");
  const auto len = io::read_le<std::uint32_t>(is, "tag length");
  set.backbone_tag.resize(len);
  if (len && !is.read(set.backbone_tag.data(), len)) throw Error(ErrorCode::MalformedFile, "truncated backbone tag");
  validate_feature_matrix(m);
  return set;
}

namespace detail {
inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}
}  // namespace detail

/// CSV variant: header f0..f{d-1},label; labels as indices or class names.
inline DeepFeatureSet read_deep_csv(std::istream& is, std::string backbone_tag = "csv") {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::MalformedFile, "missing CSV header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header.back() != "label") throw Error(ErrorCode::MalformedFile, "CSV header must end in 'label'");
  for (std::size_t j = 0; j + 1 < header.size(); ++j)
    if (header[j] != "f" + std::to_string(j)) throw Error(ErrorCode::MalformedFile, "CSV header column " + std::to_string(j));

  DeepFeatureSet set;
  set.backbone_tag = std::move(backbone_tag);
  auto& m = set.features;
  m.schema_id = kDeepSchema;
  m.cols = header.size() - 1;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorCode::MalformedFile, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " fields");
    for (std::size_t j = 0; j < m.cols; ++j) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cells[j].data(), cells[j].data() + cells[j].size(), v);
      if (ec != std::errc() || ptr != cells[j].data() + cells[j].size())
        throw Error(ErrorCode::MalformedFile, "row " + std::to_string(row) + ", column " + std::to_string(j) + " is not a number");
      m.data.push_back(v);
    }
    const auto lab = cells.back();
    int label = -1;
    const auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), label);
    if (ec != std::errc() || ptr != lab.data() + lab.size()) label = class_index(parse_class(lab));
    m.labels.push_back(label);
    ++row;
  }
  m.rows = row;
  if (m.rows == 0) throw Error(ErrorCode::MalformedFile, "empty data section");
  validate_feature_matrix(m);
  return set;
}

/// Reads LPDF1 or CSV, chosen by the leading magic bytes.
inline DeepFeatureSet load_deep_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[5] = {};
  is.read(magic, 5);
  const bool binary = is.gcount() == 5 && std::string(magic, 5) == "LPDF1";
  is.clear();
  is.seekg(0);
  try {
    return binary ? read_lpdf(is) : read_deep_csv(is, path.stem().string());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline void save_deep_features(const std::filesystem::path& path, const DeepFeatureSet& set) {
  if (path.extension() == ".csv") {
    io::write_atomically(path, [&](std::ostream& os) { os << feature_csv(set.features); }, false);
    return;
  }
  io::write_atomically(path, [&](std::ostream& os) { write_lpdf(os, set); });
}

}  // namespace lithopatch
