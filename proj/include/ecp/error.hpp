#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecp {

enum class ErrorCode {
  MalformedFile,
  LabelOutOfRange,
  NonFiniteLogit,
  NonFiniteInput,
  DegenerateSplit,
  DegenerateInput,
  IoFailure,
  RankOutOfRange,
  EmptyHoldout,
  DegenerateBeta,
  AllSetsEmpty,
  AllBinsEmpty,
  UncoveredSize,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteLogit: return "NonFiniteLogit";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::RankOutOfRange: return "RankOutOfRange";
    case ErrorCode::EmptyHoldout: return "EmptyHoldout";
    case ErrorCode::DegenerateBeta: return "DegenerateBeta";
    case ErrorCode::AllSetsEmpty: return "AllSetsEmpty";
    case ErrorCode::AllBinsEmpty: return "AllBinsEmpty";
    case ErrorCode::UncoveredSize: return "UncoveredSize";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// Every failure surfaced by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace ecp
