#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace offtrack {

enum class ErrorCode {
  kMalformedRecord,
  kDuplicateId,
  kIoFailure,
  kInvalidArgument,
  kEndpointUnavailable,
  kEndpointError,
  kTemplateMissing,
  kInsufficientPool,
  kNoCorrectOg,
  kDistractorCollision,
  kNoCorrectGuide,
  kJudgeUnparseable,
  kJudgeUnavailable,
  kEmptySamples,
  kMissingBenchmark,
  kUnscoredSample,
  kModelMismatch,
  kIncomplete,
  kDegenerate,
  kKeyMismatch,
  kPortInUse,
  kMarkerMissing,
  kManifestMismatch,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRecord: return "MALFORMED_RECORD";
    case ErrorCode::kDuplicateId: return "DUPLICATE_ID";
    case ErrorCode::kIoFailure: return "IO_FAILURE";
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kEndpointUnavailable: return "ENDPOINT_UNAVAILABLE";
    case ErrorCode::kEndpointError: return "ENDPOINT_ERROR";
    case ErrorCode::kTemplateMissing: return "TEMPLATE_MISSING";
    case ErrorCode::kInsufficientPool: return "INSUFFICIENT_POOL";
    case ErrorCode::kNoCorrectOg: return "NO_CORRECT_OG";
    case ErrorCode::kDistractorCollision: return "DISTRACTOR_COLLISION";
    case ErrorCode::kNoCorrectGuide: return "NO_CORRECT_GUIDE";
    case ErrorCode::kJudgeUnparseable: return "JUDGE_UNPARSEABLE";
    case ErrorCode::kJudgeUnavailable: return "JUDGE_UNAVAILABLE";
    case ErrorCode::kEmptySamples: return "EMPTY_SAMPLES";
    case ErrorCode::kMissingBenchmark: return "MISSING_BENCHMARK";
    case ErrorCode::kUnscoredSample: return "UNSCORED_SAMPLE";
    case ErrorCode::kModelMismatch: return "MODEL_MISMATCH";
    case ErrorCode::kIncomplete: return "INCOMPLETE";
    case ErrorCode::kDegenerate: return "DEGENERATE";
    case ErrorCode::kKeyMismatch: return "KEY_MISMATCH";
    case ErrorCode::kPortInUse: return "PORT_IN_USE";
    case ErrorCode::kMarkerMissing: return "MARKER_MISSING";
    case ErrorCode::kManifestMismatch: return "MANIFEST_MISMATCH";
  }
  return "UNKNOWN";
}

// Every failure surfaced by the library carries a code plus the offending
// detail (a line number, an id, an HTTP status...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail)
      : std::runtime_error(std::string(to_string(code)) + "(" + detail + ")"),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace offtrack
