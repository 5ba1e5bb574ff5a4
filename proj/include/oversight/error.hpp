#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oversight {

// Keep in sync with oversight_status in oversight.h; the C layer casts directly.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 1,
  kMalformedTree = 2,
  kDuplicateSibling = 3,
  kWrongRootCount = 4,
  kProcessedNodeMutated = 5,
  kRootSetChanged = 6,
  kMissingSlot = 7,
  kUnknownSlot = 8,
  kResidualPlaceholder = 9,
  kTemplateIntegrity = 10,
  kTransportError = 11,
  kBackendRefusal = 12,
  kScriptExhausted = 13,
  kStorageError = 14,
  kTreeInitFailed = 15,
  kSessionNotAwaiting = 16,
  kNodeMismatch = 17,
  kSessionNotFound = 18,
  kSessionIncomplete = 19,
  kJudgeParseError = 20,
  kEmptyRubricSet = 21,
  kIdMismatch = 22,
  kLengthMismatch = 23,
  kNoUserTurns = 24,
  kEmptyBatch = 25,
  kIntentSetMismatch = 26,
  kCapacity = 27,
  kReplayMismatch = 28,
  kConfig = 29,
  kAwaitingAnswer = 30,
  kInternal = 99,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace oversight
