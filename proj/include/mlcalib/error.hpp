#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mlcalib {

enum class ErrorCode {
  kGimbalDegenerate,
  kEmptyScan,
  kTooFewInliers,
  kDegenerateMotion,
  kDegenerateGeometry,
  kNoGroundOverlap,
  kEmptyCloud,
  kInsufficientCorrespondences,
  kNormalEstimationFailure,
  kNoUsableFrames,
  kParseError,
  kFrameMismatch,
  kConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kGimbalDegenerate: return "GimbalDegenerate";
    case ErrorCode::kEmptyScan: return "EmptyScan";
    case ErrorCode::kTooFewInliers: return "TooFewInliers";
    case ErrorCode::kDegenerateMotion: return "DegenerateMotion";
    case ErrorCode::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::kNoGroundOverlap: return "NoGroundOverlap";
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kInsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::kNormalEstimationFailure: return "NormalEstimationFailure";
    case ErrorCode::kNoUsableFrames: return "NoUsableFrames";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kFrameMismatch: return "FrameMismatch";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (notably the CLI) can map it to an exit status.
class CalibError : public std::runtime_error {
 public:
  CalibError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mlcalib
