#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kinship {

/// Machine-readable failure category carried by every library exception.
enum class ErrorKind {
  kParse,
  kDuplicateId,
  kPersonFamilyConflict,
  kBadMagic,
  kTruncatedFile,
  kNonFiniteValue,
  kRowOutOfRange,
  kIo,
  kZeroVector,
  kDimensionMismatch,
  kUnknownImageId,
  kNotEnoughFamilies,
  kNoEligibleAnchor,
  kUnknownKinType,
  kDegenerateLabels,
  kEmptyScores,
  kLengthMismatch,
  kLabelOutOfRange,
  kIndexOutOfRange,
  kInvalidConfig,
  kEmptyProbe,
  kNoRelevant,
};

inline std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kDuplicateId: return "DuplicateId";
    case ErrorKind::kPersonFamilyConflict: return "PersonFamilyConflict";
    case ErrorKind::kBadMagic: return "BadMagic";
    case ErrorKind::kTruncatedFile: return "TruncatedFile";
    case ErrorKind::kNonFiniteValue: return "NonFiniteValue";
    case ErrorKind::kRowOutOfRange: return "RowOutOfRange";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kZeroVector: return "ZeroVector";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kUnknownImageId: return "UnknownImageId";
    case ErrorKind::kNotEnoughFamilies: return "NotEnoughFamilies";
    case ErrorKind::kNoEligibleAnchor: return "NoEligibleAnchor";
    case ErrorKind::kUnknownKinType: return "UnknownKinType";
    case ErrorKind::kDegenerateLabels: return "DegenerateLabels";
    case ErrorKind::kEmptyScores: return "EmptyScores";
    case ErrorKind::kLengthMismatch: return "LengthMismatch";
    case ErrorKind::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kEmptyProbe: return "EmptyProbe";
    case ErrorKind::kNoRelevant: return "NoRelevant";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace kinship
