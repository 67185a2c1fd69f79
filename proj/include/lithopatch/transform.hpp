#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/error.hpp"

namespace lithopatch {

/// Row-major 3x3 homogeneous matrix mapping source (x, y, 1) to destination.
using Mat3 = std::array<double, 9>;

inline constexpr Mat3 kIdentity3 = {1, 0, 0, 0, 1, 0, 0, 0, 1};

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = s;
    }
  return r;
}

inline double determinant(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

/// Adjugate-based inverse. Throws SingularTransform when |det| <= 1e-12.
inline Mat3 inverse(const Mat3& m) {
  const double det = determinant(m);
  if (!(std::abs(det) > 1e-12)) throw Error(ErrorCode::SingularTransform, "matrix is not invertible");
  Mat3 r = {m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
  for (double& v : r) v /= det;
  return r;
}

enum class FlipAxis { horizontal, vertical };

/// Geometric transform applied to a square patch.
struct TransformDescriptor {
  enum class Kind { flip, affine, perspective, composite };

  Kind kind = Kind::affine;
  FlipAxis axis = FlipAxis::horizontal;   // flip
  Mat3 matrix = kIdentity3;               // affine (last row 0 0 1) or perspective
  std::vector<TransformDescriptor> parts; // composite, applied first to last

  static TransformDescriptor flip(FlipAxis a) {
    TransformDescriptor t;
    t.kind = Kind::flip;
    t.axis = a;
    return t;
  }
  static TransformDescriptor affine(const std::array<double, 6>& m) {
    TransformDescriptor t;
    t.kind = Kind::affine;
    t.matrix = {m[0], m[1], m[2], m[3], m[4], m[5], 0, 0, 1};
    return t;
  }
  static TransformDescriptor perspective(const Mat3& m) {
    TransformDescriptor t;
    t.kind = Kind::perspective;
    t.matrix = m;
    return t;
  }
  static TransformDescriptor composite(std::vector<TransformDescriptor> parts) {
    TransformDescriptor t;
    t.kind = Kind::composite;
    t.parts = std::move(parts);
    return t;
  }

  bool operator==(const TransformDescriptor&) const = default;
};

/// Forward matrix of the transform for a patch of the given side.
inline Mat3 to_matrix(const TransformDescriptor& t, int size) {
  switch (t.kind) {
    case TransformDescriptor::Kind::flip:
      if (t.axis == FlipAxis::horizontal) return {-1, 0, double(size - 1), 0, 1, 0, 0, 0, 1};
      return {1, 0, 0, 0, -1, double(size - 1), 0, 0, 1};
    case TransformDescriptor::Kind::affine:
    case TransformDescriptor::Kind::perspective:
      return t.matrix;
    case TransformDescriptor::Kind::composite: {
      Mat3 m = kIdentity3;
      for (const auto& p : t.parts) m = matmul(to_matrix(p, size), m);
      return m;
    }
  }
  return kIdentity3;
}

/// Checks the descriptor invariants (affine 2x2 block and perspective matrix invertible).
inline void validate(const TransformDescriptor& t) {
  switch (t.kind) {
    case TransformDescriptor::Kind::flip:
      return;
    case TransformDescriptor::Kind::affine: {
      const double det = t.matrix[0] * t.matrix[4] - t.matrix[1] * t.matrix[3];
      if (!(std::abs(det) > 1e-9)) throw Error(ErrorCode::SingularTransform, "affine block is singular");
      return;
    }
    case TransformDescriptor::Kind::perspective:
      if (!(std::abs(determinant(t.matrix)) > 1e-9) || t.matrix[8] == 0.0)
        throw Error(ErrorCode::SingularTransform, "perspective matrix is singular");
      return;
    case TransformDescriptor::Kind::composite:
      for (const auto& p : t.parts) validate(p);
      return;
  }
}

inline nlohmann::json to_json(const TransformDescriptor& t) {
  using nlohmann::json;
  switch (t.kind) {
    case TransformDescriptor::Kind::flip:
      return {{"kind", "flip"}, {"axis", t.axis == FlipAxis::horizontal ? "horizontal" : "vertical"}};
    case TransformDescriptor::Kind::affine:
      return {{"kind", "affine"},
              {"matrix", {t.matrix[0], t.matrix[1], t.matrix[2], t.matrix[3], t.matrix[4], t.matrix[5]}}};
    case TransformDescriptor::Kind::perspective:
      return {{"kind", "perspective"}, {"matrix", t.matrix}};
    case TransformDescriptor::Kind::composite: {
      json parts = json::array();
      for (const auto& p : t.parts) parts.push_back(to_json(p));
      return {{"kind", "composite"}, {"parts", parts}};
    }
  }
  return {};
}

inline TransformDescriptor transform_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "flip") {
      const std::string axis = j.at("axis").get<std::string>();
      if (axis != "horizontal" && axis != "vertical") throw Error(ErrorCode::MalformedFile, "bad flip axis");
      return TransformDescriptor::flip(axis == "horizontal" ? FlipAxis::horizontal : FlipAxis::vertical);
    }
    if (kind == "affine") return TransformDescriptor::affine(j.at("matrix").get<std::array<double, 6>>());
    if (kind == "perspective") return TransformDescriptor::perspective(j.at("matrix").get<Mat3>());
    if (kind == "composite") {
      std::vector<TransformDescriptor> parts;
      for (const auto& p : j.at("parts")) parts.push_back(transform_from_json(p));
      return TransformDescriptor::composite(std::move(parts));
    }
    throw Error(ErrorCode::MalformedFile, "unknown transform kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("transform descriptor: ") + e.what());
  }
}

}  // namespace lithopatch
