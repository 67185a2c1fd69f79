#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lithopatch {

enum class ErrorCode {
  // core imaging
  DegenerateChannel,
  // patch sampling
  EmptyMask,
  MaskImageMismatch,
  EmptyClass,
  InsufficientArea,
  // augmentation
  SingularTransform,
  // features
  PatchTooSmall,
  // classifiers
  EmptyTraining,
  SchemaMismatch,
  TooFewSamples,
  // mlp head
  DimensionMismatch,
  EmptySplit,
  DivergedLoss,
  MalformedFile,
  LabelOutOfRange,
  NonFiniteValue,
  // evaluation
  LengthMismatch,
  ZeroSupport,
  ClassTooSmall,
  BadFractions,
  // projection
  DegenerateData,
  // pipeline
  IoError,
  MissingArtifact,
  ConfigInvalid,
  Internal,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateChannel: return "DegenerateChannel";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::MaskImageMismatch: return "MaskImageMismatch";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::InsufficientArea: return "InsufficientArea";
    case ErrorCode::SingularTransform: return "SingularTransform";
    case ErrorCode::PatchTooSmall: return "PatchTooSmall";
    case ErrorCode::EmptyTraining: return "EmptyTraining";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroSupport: return "ZeroSupport";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::BadFractions: return "BadFractions";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the error-code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

/// Process exit status for a failure: 1 usage/config, 2 data, 3 internal.
inline int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
      return 1;
    case ErrorCode::Internal:
      return 3;
    default:
      return 2;
  }
}

}  // namespace lithopatch
