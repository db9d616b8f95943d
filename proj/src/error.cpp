#include "retino/error.hpp"

namespace retino {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingPath: return "MissingPath";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::DegenerateFraction: return "DegenerateFraction";
    case ErrorCode::ZeroDimension: return "ZeroDimension";
    case ErrorCode::AlreadyNormalized: return "AlreadyNormalized";
    case ErrorCode::InvalidPolicy: return "InvalidPolicy";
    case ErrorCode::ImageDecode: return "ImageDecode";
    case ErrorCode::UnknownBackbone: return "UnknownBackbone";
    case ErrorCode::WeightArchiveMissing: return "WeightArchiveMissing";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BackboneUnavailable: return "BackboneUnavailable";
    case ErrorCode::NotOneHot: return "NotOneHot";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::BackboneMismatch: return "BackboneMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::EmptyHistory: return "EmptyHistory";
    case ErrorCode::IncompleteRecord: return "IncompleteRecord";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::RunDirLocked: return "RunDirLocked";
  }
  return "Unknown";
}

}  // namespace retino
