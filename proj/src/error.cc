#include "deviloc/error.h"

namespace deviloc {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kUnsupportedCameraModel: return "UnsupportedCameraModel";
    case ErrorCode::kNoObservations: return "NoObservations";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kNoOverlap: return "NoOverlap";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptyKeySet: return "EmptyKeySet";
    case ErrorCode::kNoGradient: return "NoGradient";
    case ErrorCode::kEmptyObserved: return "EmptyObserved";
    case ErrorCode::kEmptyMatches: return "EmptyMatches";
    case ErrorCode::kMissingDepth: return "MissingDepth";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kTooFewMatches: return "TooFewMatches";
    case ErrorCode::kNoModelFound: return "NoModelFound";
    case ErrorCode::kNumericalFailure: return "NumericalFailure";
    case ErrorCode::kUnknownImage: return "UnknownImage";
    case ErrorCode::kAllPairsFailed: return "AllPairsFailed";
    case ErrorCode::kMissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

ParseError::ParseError(std::string file, int line, const std::string& reason)
    : Error(ErrorCode::kParseError,
            file + ":" + std::to_string(line) + ": " + reason),
      file_(std::move(file)),
      line_(line) {}

void Throw(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace deviloc
