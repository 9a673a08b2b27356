#include "disco/error.hpp"

namespace disco {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kOverflow: return "overflow";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kCountMismatch: return "count-mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kMalformedFrame: return "malformed-frame";
    case ErrorCode::kOversizeFrame: return "oversize-frame";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kManifestMismatch: return "manifest-mismatch";
    case ErrorCode::kMixedRounds: return "mixed-rounds";
    case ErrorCode::kIncompleteShares: return "incomplete-shares";
    case ErrorCode::kUnknownTask: return "unknown-task";
    case ErrorCode::kDuplicateTask: return "duplicate-task";
    case ErrorCode::kInvalidSpec: return "invalid-spec";
    case ErrorCode::kSessionFinished: return "session-finished";
    case ErrorCode::kUnreachable: return "unreachable";
    case ErrorCode::kInvariant: return "invariant";
  }
  return "unknown";
}

}  // namespace disco
