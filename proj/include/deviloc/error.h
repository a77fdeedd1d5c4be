#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace deviloc {

enum class ErrorCode {
  kNonPositiveDepth,
  kParseError,
  kUnsupportedCameraModel,
  kNoObservations,
  kConfigError,
  kNoOverlap,
  kDimensionMismatch,
  kShapeMismatch,
  kEmptyKeySet,
  kNoGradient,
  kEmptyObserved,
  kEmptyMatches,
  kMissingDepth,
  kDegenerateConfiguration,
  kTooFewMatches,
  kNoModelFound,
  kNumericalFailure,
  kUnknownImage,
  kAllPairsFailed,
  kMissingGroundTruth,
  kIoError,
  kNonFiniteLoss,
};

std::string_view ErrorCodeName(ErrorCode code);

// Every failure in the library surfaces as an Error carrying a code, so
// callers (the CLI in particular) can map failures to exit codes and
// per-query failure reasons without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::string file, int line, const std::string& reason);

  const std::string& file() const { return file_; }
  int line() const { return line_; }

 private:
  std::string file_;
  int line_;
};

[[noreturn]] void Throw(ErrorCode code, const std::string& message);

}  // namespace deviloc
