#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace quantmcu {

enum class ErrorCode {
  InvalidNetwork,
  NonPositiveShape,
  SpatialOnly,
  UnevenGrid,
  UnknownBitwidth,
  ShapeMismatch,
  MissingRange,
  EmptyCalibration,
  TooFewSamples,
  DegenerateSigma,
  BadRange,
  EmptyValues,
  EmptyPatch,
  ZeroB,
  Infeasible,
  InvalidConfig,
  Parse,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidNetwork: return "InvalidNetwork";
    case ErrorCode::NonPositiveShape: return "NonPositiveShape";
    case ErrorCode::SpatialOnly: return "SpatialOnly";
    case ErrorCode::UnevenGrid: return "UnevenGrid";
    case ErrorCode::UnknownBitwidth: return "UnknownBitwidth";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingRange: return "MissingRange";
    case ErrorCode::EmptyCalibration: return "EmptyCalibration";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DegenerateSigma: return "DegenerateSigma";
    case ErrorCode::BadRange: return "BadRange";
    case ErrorCode::EmptyValues: return "EmptyValues";
    case ErrorCode::EmptyPatch: return "EmptyPatch";
    case ErrorCode::ZeroB: return "ZeroB";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// All library failures surface as this exception; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace quantmcu
