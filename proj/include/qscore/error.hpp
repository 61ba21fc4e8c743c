#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qscore {

enum class ErrorCode {
  kIo,
  kMissingColumn,
  kMalformedRow,
  kTargetOutOfRange,
  kTooFewGroups,
  kUnknownColumn,
  kLengthMismatch,
  kParseError,
  kValueOutOfBounds,
  kMissingSpecialToken,
  kDuplicateToken,
  kInvalidConfig,
  kShapeMismatch,
  kCorruptArchive,
  kUnsupportedVersion,
  kNotFitted,
  kEmptyCorpus,
};

std::string_view to_string(ErrorCode code);

/// All library failures surface as this exception; `code()` identifies the
/// failure class, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kMalformedRow: return "MalformedRow";
    case ErrorCode::kTargetOutOfRange: return "TargetOutOfRange";
    case ErrorCode::kTooFewGroups: return "TooFewGroups";
    case ErrorCode::kUnknownColumn: return "UnknownColumn";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kValueOutOfBounds: return "ValueOutOfBounds";
    case ErrorCode::kMissingSpecialToken: return "MissingSpecialToken";
    case ErrorCode::kDuplicateToken: return "DuplicateToken";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kCorruptArchive: return "CorruptArchive";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kNotFitted: return "NotFitted";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
  }
  return "Error";
}

}  // namespace qscore
