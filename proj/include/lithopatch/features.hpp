#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lithopatch/binary_io.hpp"
#include "lithopatch/color.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/image.hpp"
#include "lithopatch/labels.hpp"
#include "lithopatch/lbp.hpp"
#include "lithopatch/parallel.hpp"
#include "lithopatch/patch_sampling.hpp"

namespace lithopatch {

inline constexpr const char* kHsiLbpSchema = "hsi-lbp-v1";
inline constexpr int kLbpBins = 10;
inline constexpr int kHsiStats = 9;
inline constexpr int kHsiLbpLength = kLbpBins + kHsiStats;

struct FeatureVector {
  std::vector<double> values;
  std::string schema_id;
};

/// Column names of a feature layout.
inline std::vector<std::string> schema_columns(const std::string& schema_id, std::size_t width) {
  std::vector<std::string> cols;
  if (schema_id == kHsiLbpSchema) {
    for (int b = 0; b < kLbpBins; ++b) cols.push_back("lbp_" + std::to_string(b));
    for (const char* ch : {"h", "s", "i"})
      for (const char* st : {"mean", "std", "energy"}) cols.push_back(std::string(ch) + "_" + st);
  } else {
    for (std::size_t j = 0; j < width; ++j) cols.push_back("f" + std::to_string(j));
  }
  return cols;
}

/// [H: mean, sigma, energy; S: ...; I: ...] with H scaled to [0,1] and
/// energy = mean of squared values; sigma is the population deviation.
inline std::vector<double> hsi_color_features(const Image& rgb) {
  if (rgb.channels() != 3 || rgb.empty()) throw Error(ErrorCode::DimensionMismatch, "expected a non-empty RGB patch");
  const std::size_t n = rgb.pixel_count();
  std::vector<double> h(n), s(n), i(n);
  auto src = rgb.data();
  for (std::size_t p = 0; p < n; ++p) {
    const Hsi v = rgb_to_hsi(src[3 * p], src[3 * p + 1], src[3 * p + 2]);
    h[p] = v.h / 360.0;
    s[p] = v.s;
    i[p] = v.i;
  }
  std::vector<double> out;
  out.reserve(kHsiStats);
  for (const auto* ch : {&h, &s, &i}) {
    double sum = 0.0, sq = 0.0;
    for (double v : *ch) {
      sum += v;
      sq += v * v;
    }
    const double mean = sum / static_cast<double>(n);
    double dev = 0.0;
    for (double v : *ch) dev += (v - mean) * (v - mean);
    out.push_back(mean);
    out.push_back(std::sqrt(dev / static_cast<double>(n)));
    out.push_back(sq / static_cast<double>(n));
  }
  return out;
}

/// LBP riu2 (P=8, R=1) over the BT.601 gray patch followed by the nine HSI statistics.
inline FeatureVector featurize(const Image& rgb) {
  FeatureVector fv;
  fv.schema_id = kHsiLbpSchema;
  fv.values = lbp_riu2(to_grayscale(rgb));
  const auto color = hsi_color_features(rgb);
  fv.values.insert(fv.values.end(), color.begin(), color.end());
  for (double v : fv.values)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "feature vector has a non-finite entry");
  return fv;
}

inline FeatureVector featurize(const Image8& rgb) { return featurize(to_unit(rgb)); }

/// Dense row-major feature matrix with integer class labels.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<int> labels;
  std::string schema_id = kHsiLbpSchema;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * cols, cols); }

  void append(std::span<const double> values, int label) {
    if (rows == 0 && cols == 0) cols = values.size();
    if (values.size() != cols) throw Error(ErrorCode::SchemaMismatch, "row width differs from matrix width");
    data.insert(data.end(), values.begin(), values.end());
    labels.push_back(label);
    ++rows;
  }

  /// Rows selected by index, in the given order.
  FeatureMatrix subset(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.cols = cols;
    out.schema_id = schema_id;
    out.data.reserve(idx.size() * cols);
    for (std::size_t r : idx) {
      auto src = row(r);
      out.data.insert(out.data.end(), src.begin(), src.end());
      out.labels.push_back(labels[r]);
    }
    out.rows = idx.size();
    return out;
  }

  bool operator==(const FeatureMatrix&) const = default;
};

/// Row i = featurize(record i); labels use the fixed class map.
inline FeatureMatrix featurize_dataset(const PatchDataset& dataset) {
  if (dataset.records.empty()) throw Error(ErrorCode::EmptyTraining, "cannot featurize an empty dataset");
  std::vector<FeatureVector> rows(dataset.records.size());
  parallel_for(rows.size(), [&](std::size_t i) { rows[i] = featurize(dataset.records[i].patch); });
  FeatureMatrix m;
  for (std::size_t i = 0; i < rows.size(); ++i) m.append(rows[i].values, class_index(dataset.records[i].label));
  return m;
}

inline void validate_feature_matrix(const FeatureMatrix& m, int num_classes = kNumClasses) {
  if (m.data.size() != m.rows * m.cols || m.labels.size() != m.rows)
    throw Error(ErrorCode::MalformedFile, "feature matrix dimensions are inconsistent");
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (m.labels[r] < 0 || m.labels[r] >= num_classes)
      throw Error(ErrorCode::LabelOutOfRange, "row " + std::to_string(r) + " label " + std::to_string(m.labels[r]));
    for (std::size_t c = 0; c < m.cols; ++c)
      if (!std::isfinite(m.at(r, c)))
        throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(r) + ", column " + std::to_string(c));
  }
}

// --- LPFV1: "LPFV1", u32 rows, u32 cols, f64 row-major data, u8 labels (little-endian)

inline void write_lpfv(std::ostream& os, const FeatureMatrix& m) {
  os.write("LPFV1", 5);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) io::write_le<double>(os, v);
  for (int l : m.labels) io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(l));
}

inline void save_lpfv(const std::filesystem::path& path, const FeatureMatrix& m) {
  io::write_atomically(path, [&](std::ostream& os) { write_lpfv(os, m); });
}

inline FeatureMatrix read_lpfv(std::istream& is, const std::string& schema_id = kHsiLbpSchema) {
  char magic[5];
  if (!is.read(magic, 5) || std::string(magic, 5) != "LPFV1") throw Error(ErrorCode::MalformedFile, "bad LPFV1 magic");
  FeatureMatrix m;
  m.schema_id = schema_id;
  m.rows = io::read_le<std::uint32_t>(is, "row count");
  m.cols = io::read_le<std::uint32_t>(is, "column count");
  m.data.resize(m.rows * m.cols);
  for (double& v : m.data) v = io::read_le<double>(is, "feature data");
  m.labels.resize(m.rows);
  for (int& l : m.labels) l = io::read_le<std::uint8_t>(is, "labels");
  validate_feature_matrix(m);
  return m;
}

inline FeatureMatrix load_lpfv(const std::filesystem::path& path, const std::string& schema_id = kHsiLbpSchema) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_lpfv(is, schema_id);
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with a header of schema column names followed by `label`.
inline std::string feature_csv(const FeatureMatrix& m) {
  std::ostringstream os;
  const auto cols = schema_columns(m.schema_id, m.cols);
  for (const auto& c : cols) os << c << ',';
  os << "label\n";
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) os << format_real(m.at(r, c)) << ',';
    os << m.labels[r] << '\n';
  }
  return os.str();
}

}  // namespace lithopatch
