#pragma once

#include <array>
#include <string>
#include <string_view>

#include "lithopatch/error.hpp"

namespace lithopatch {

inline constexpr int kNumClasses = 4;

/// Fixed label map: COM 0, COD 1, UA 2, BRU 3.
enum class StoneClass : int { COM = 0, COD = 1, UA = 2, BRU = 3 };

enum class View { surface, section };

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"COM", "COD", "UA", "BRU"};

inline int class_index(StoneClass c) { return static_cast<int>(c); }

inline std::string_view class_name(StoneClass c) { return kClassNames[class_index(c)]; }
inline std::string_view class_name(int label) {
  if (label < 0 || label >= kNumClasses)
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  return kClassNames[label];
}

inline StoneClass parse_class(std::string_view name) {
  for (int k = 0; k < kNumClasses; ++k)
    if (kClassNames[k] == name) return static_cast<StoneClass>(k);
  throw Error(ErrorCode::LabelOutOfRange, "unknown stone class '" + std::string(name) + "'");
}

inline std::string_view view_name(View v) { return v == View::surface ? "surface" : "section"; }

inline View parse_view(std::string_view name) {
  if (name == "surface") return View::surface;
  if (name == "section") return View::section;
  throw Error(ErrorCode::MalformedFile, "unknown view '" + std::string(name) + "'");
}

}  // namespace lithopatch
