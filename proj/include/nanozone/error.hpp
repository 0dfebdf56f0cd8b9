#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nanozone {

// Contract violations and configuration errors. Architectural outcomes
// (faults, violations, monitor rejections) are returned as values instead.
enum class ErrorCode {
  kInvalidArgument,
  kInvalidPte,
  kNotRoot,
  kInvalidRange,
  kInvalidWindow,
  kUnknownGpt,
  kExhausted,
  kEmptyTrace,
  kPimFull,
  kGcsStoreFault,
  kStackUnderflow,
  kMalformedProgram,
  kContextMismatch,
  kUnknownScenario,
  kConfig,
  kFeatureDisabled,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidPte: return "InvalidPte";
    case ErrorCode::kNotRoot: return "NotRoot";
    case ErrorCode::kInvalidRange: return "InvalidRange";
    case ErrorCode::kInvalidWindow: return "InvalidWindow";
    case ErrorCode::kUnknownGpt: return "UnknownGpt";
    case ErrorCode::kExhausted: return "Exhausted";
    case ErrorCode::kEmptyTrace: return "EmptyTrace";
    case ErrorCode::kPimFull: return "PimFull";
    case ErrorCode::kGcsStoreFault: return "GcsStoreFault";
    case ErrorCode::kStackUnderflow: return "StackUnderflow";
    case ErrorCode::kMalformedProgram: return "MalformedProgram";
    case ErrorCode::kContextMismatch: return "ContextMismatch";
    case ErrorCode::kUnknownScenario: return "UnknownScenario";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kFeatureDisabled: return "FeatureDisabled";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nanozone
