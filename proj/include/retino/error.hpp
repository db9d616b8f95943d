#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace retino {

enum class ErrorCode {
  // dataset
  MissingPath,
  MalformedRow,
  UnknownLabel,
  EmptyManifest,
  DegenerateFraction,
  // preprocess
  ZeroDimension,
  AlreadyNormalized,
  InvalidPolicy,
  ImageDecode,
  // model
  UnknownBackbone,
  WeightArchiveMissing,
  ShapeMismatch,
  BackboneUnavailable,
  NotOneHot,
  StaleCache,
  // optim
  NonFiniteGradient,
  // train
  EmptySplit,
  NonFiniteLoss,
  IoFailure,
  CorruptCheckpoint,
  BackboneMismatch,
  // eval
  LengthMismatch,
  Empty,
  IndexOutOfRange,
  DegenerateClass,
  // report
  EmptyHistory,
  IncompleteRecord,
  // cli
  InvalidConfig,
  RunDirLocked,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the pipeline; the code says what went wrong,
/// the message says where.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace retino
