#pragma once

#include <stdexcept>
#include <string>

namespace motext {

enum class ErrorCode {
  MissingFile,
  DimensionMismatch,
  DuplicateId,
  MalformedRecord,
  EmptySplit,
  NonPositiveWeight,
  EmptyLabel,
  AuthMissing,
  EndpointUnreachable,
  EmptyPool,
  ZeroNormMean,
  EmptySequence,
  MissingEmbedding,
  EmptyTrainSet,
  BatchTooSmall,
  EmptyRanks,
  PairMissing,
  EmptyGallery,
  NoTestInstances,
  InvalidConfig,
};

const char* to_string(ErrorCode code);

/// All recoverable failures carry a code (stable, testable) and a message
/// naming the offending record, file, or config key.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace motext
