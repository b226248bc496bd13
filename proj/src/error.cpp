// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/error.hpp"

namespace mtlcap {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::DuplicateImageId: return "DuplicateImageId";
    case ErrorCode::UnsplitImage: return "UnsplitImage";
    case ErrorCode::BadIndex: return "BadIndex";
    case ErrorCode::EmptyClassDir: return "EmptyClassDir";
    case ErrorCode::NoClasses: return "NoClasses";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::MalformedVectorLine: return "MalformedVectorLine";
    case ErrorCode::UndecodableImage: return "UndecodableImage";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CacheMiss: return "CacheMiss";
    case ErrorCode::CorruptEntry: return "CorruptEntry";
    case ErrorCode::NonSquareGrid: return "NonSquareGrid";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::PhaseOrderViolation: return "PhaseOrderViolation";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyReferenceSet: return "EmptyReferenceSet";
    case ErrorCode::MissingHypothesis: return "MissingHypothesis";
    case ErrorCode::CheckpointLacksDecoder: return "CheckpointLacksDecoder";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::PhaseOrderViolation:
      return 1;
    case ErrorCode::IncompatibleCheckpoint:
    case ErrorCode::EmptyTarget:
    case ErrorCode::IoError:
      return 3;
    default:
      return 2;
  }
}

}  // namespace mtlcap
