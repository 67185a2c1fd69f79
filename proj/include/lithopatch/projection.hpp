#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/binary_io.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/labels.hpp"
#include "lithopatch/parallel.hpp"

namespace lithopatch {

struct ProjectionModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  ///< c x d, one unit direction per row
  Eigen::VectorXd eigenvalues;  ///< variance along each component (n - 1 normalization)
  Eigen::VectorXd explained_ratio;
  double total_variance = 0.0;
};

/// PCA on the mean-centred sample covariance. Components are the top-c
/// eigenvectors, each signed so that its largest-magnitude entry is positive.
inline ProjectionModel fit_projection(const Eigen::MatrixXd& X, int c = 3) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 2) throw Error(ErrorCode::TooFewSamples, "projection needs at least 2 rows");
  if (c < 1 || c > std::min<Eigen::Index>(n - 1, d))
    throw Error(ErrorCode::DimensionMismatch, "c = " + std::to_string(c) + " exceeds min(n - 1, d)");

  ProjectionModel model;
  model.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centred = X.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(n - 1);
  model.total_variance = cov.trace();
  if (!(model.total_variance > 0.0)) throw Error(ErrorCode::DegenerateData, "data has zero total variance");

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::Internal, "eigendecomposition failed");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return solver.eigenvalues()(a) > solver.eigenvalues()(b); });

  model.components.resize(c, d);
  model.eigenvalues.resize(c);
  model.explained_ratio.resize(c);
  for (int k = 0; k < c; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(order[static_cast<std::size_t>(k)]);
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < d; ++j)
      if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
    if (v(arg) < 0.0) v = -v;
    model.components.row(k) = v.transpose();
    const double lambda = std::max(0.0, solver.eigenvalues()(order[static_cast<std::size_t>(k)]));
    model.eigenvalues(k) = lambda;
    model.explained_ratio(k) = lambda / model.total_variance;
  }
  return model;
}

inline Eigen::MatrixXd to_matrix(const FeatureMatrix& m) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m.at(r, c);
  return X;
}

inline ProjectionModel fit_projection(const FeatureMatrix& m, int c = 3) { return fit_projection(to_matrix(m), c); }

/// (X - mean) * components^T, computed row by row in parallel.
inline Eigen::MatrixXd project(const ProjectionModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.mean.size())
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(model.mean.size()) + " columns, got " +
                                                  std::to_string(X.cols()));
  Eigen::MatrixXd out(X.rows(), model.components.rows());
  parallel_for(static_cast<std::size_t>(X.rows()), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.row(r) = (model.components * (X.row(r).transpose() - model.mean)).transpose();
  });
  return out;
}

/// Mean silhouette coefficient (Euclidean). Undefined with fewer than two labels.
inline std::optional<double> silhouette_score(const Eigen::MatrixXd& points, std::span<const int> labels) {
  const Eigen::Index n = points.rows();
  std::vector<int> distinct(labels.begin(), labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2 || static_cast<std::size_t>(n) != labels.size()) return std::nullopt;

  std::vector<double> s(static_cast<std::size_t>(n), 0.0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    std::vector<double> sum(distinct.size(), 0.0);
    std::vector<std::size_t> count(distinct.size(), 0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (static_cast<std::size_t>(j) == i) continue;
      const auto k = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), labels[j]) - distinct.begin());
      sum[k] += (points.row(static_cast<Eigen::Index>(i)) - points.row(j)).norm();
      ++count[k];
    }
    const auto own = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), labels[i]) - distinct.begin());
    if (count[own] == 0) return;  // singleton cluster scores 0
    const double a = sum[own] / static_cast<double>(count[own]);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < distinct.size(); ++k)
      if (k != own && count[k] > 0) b = std::min(b, sum[k] / static_cast<double>(count[k]));
    const double m = std::max(a, b);
    s[i] = m > 0.0 ? (b - a) / m : 0.0;
  });
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(n);
}

/// Fixed per-class colours: COM, COD, UA, BRU.
inline constexpr std::array<const char*, kNumClasses> kClassPalette = {"#8c564b", "#e6b800", "#ff7f0e", "#1f77b4"};

inline std::string scatter_csv(const Eigen::MatrixXd& coords, std::span<const int> labels) {
  const char* axes[] = {"x", "y", "z"};
  std::ostringstream os;
  for (Eigen::Index c = 0; c < coords.cols(); ++c) os << axes[c] << ',';
  os << "label\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    for (Eigen::Index c = 0; c < coords.cols(); ++c) os << format_real(coords(i, c)) << ',';
    os << class_name(labels[static_cast<std::size_t>(i)]) << '\n';
  }
  return os.str();
}

/// 800x600 scatter of the first two coordinates with a four-class legend.
inline std::string scatter_svg(const Eigen::MatrixXd& coords, std::span<const int> labels,
                               const std::string& title = "Feature projection") {
  constexpr double W = 800, H = 600, left = 60, right = 160, top = 40, bottom = 50;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (coords.rows() > 0) {
    xmin = coords.col(0).minCoeff(), xmax = coords.col(0).maxCoeff();
    ymin = coords.col(1).minCoeff(), ymax = coords.col(1).maxCoeff();
  }
  if (xmax - xmin <= 0.0) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin <= 0.0) ymin -= 0.5, ymax += 0.5;
  const double pw = W - left - right, ph = H - top - bottom;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">\n"
     << "<rect width=\"800\" height=\"600\" fill=\"white\"/>\n"
     << "<text x=\"" << num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n"
     << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
     << "\" fill=\"none\" stroke=\"#444\"/>\n"
     << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(H - 15)
     << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">component 1</text>\n"
     << "<text x=\"20\" y=\"" << num(top + ph / 2) << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 20 "
     << num(top + ph / 2) << ")\" text-anchor=\"middle\">component 2</text>\n"
     << "<g class=\"points\">\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const double x = left + (coords(i, 0) - xmin) / (xmax - xmin) * pw;
    const double y = top + ph - (coords(i, 1) - ymin) / (ymax - ymin) * ph;
    os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"3\" fill=\""
       << kClassPalette[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] << "\" fill-opacity=\"0.7\"/>\n";
  }
  os << "</g>\n<g class=\"legend\">\n";
  for (int k = 0; k < kNumClasses; ++k) {
    const double y = top + 20 + 24.0 * k;
    os << "<rect class=\"legend-entry\" x=\"" << num(W - right + 20) << "\" y=\"" << num(y - 10)
       << "\" width=\"12\" height=\"12\" fill=\"" << kClassPalette[k] << "\"/>"
       << "<text x=\"" << num(W - right + 40) << "\" y=\"" << num(y)
       << "\" font-family=\"sans-serif\" font-size=\"13\">" << class_name(k) << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

/// Writes <stem>.csv and <stem>.svg.
inline void export_scatter(const Eigen::MatrixXd& coords, std::span<const int> labels, const std::filesystem::path& stem) {
  if (coords.cols() != 2 && coords.cols() != 3)
    throw Error(ErrorCode::DimensionMismatch, "scatter export needs 2 or 3 coordinates");
  if (static_cast<std::size_t>(coords.rows()) != labels.size())
    throw Error(ErrorCode::LengthMismatch, "coordinates and labels differ in length");
  auto csv = stem, svg = stem;
  csv += ".csv";
  svg += ".svg";
  io::write_text_atomically(csv, scatter_csv(coords, labels));
  io::write_text_atomically(svg, scatter_svg(coords, labels));
}

inline nlohmann::json to_json(const ProjectionModel& m) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json comps = nlohmann::json::array();
  for (Eigen::Index k = 0; k < m.components.rows(); ++k) comps.push_back(vec(m.components.row(k).transpose()));
  return {{"method", "pca"},
          {"mean", vec(m.mean)},
          {"components", comps},
          {"eigenvalues", vec(m.eigenvalues)},
          {"explained_variance_ratio", vec(m.explained_ratio)},
          {"total_variance", m.total_variance}};
}

}  // namespace lithopatch
