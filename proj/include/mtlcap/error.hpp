// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtlcap {

enum class ErrorCode {
  // corpus
  MissingFile,
  MalformedLine,
  DuplicateImageId,
  UnsplitImage,
  BadIndex,
  EmptyClassDir,
  NoClasses,
  TruncatedFile,
  // text
  EmptyCorpus,
  DimMismatch,
  MalformedVectorLine,
  // features
  UndecodableImage,
  ProviderUnavailable,
  ShapeMismatch,
  CacheMiss,
  CorruptEntry,
  // model
  NonSquareGrid,
  LabelOutOfRange,
  EmptyTarget,
  // training
  EmptyDataset,
  IncompatibleCheckpoint,
  PhaseOrderViolation,
  // metrics
  LengthMismatch,
  EmptyInput,
  EmptyReferenceSet,
  MissingHypothesis,
  // cli
  CheckpointLacksDecoder,
  ConfigError,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

/// Every failure surfaced by the library carries a code so callers (and the
/// CLI's exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// 1 usage/config, 2 data, 3 runtime/training.
int exit_code_for(ErrorCode code);

}  // namespace mtlcap
