#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace disco {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNonFinite,
  kOverflow,
  kEmptyInput,
  kParse,
  kIo,
  kBadMagic,
  kCountMismatch,
  kTruncated,
  kMalformedFrame,
  kOversizeFrame,
  kVersionMismatch,
  kManifestMismatch,
  kMixedRounds,
  kIncompleteShares,
  kUnknownTask,
  kDuplicateTask,
  kInvalidSpec,
  kSessionFinished,
  kUnreachable,
  kInvariant,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception; `code()` is stable, the
// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace disco
