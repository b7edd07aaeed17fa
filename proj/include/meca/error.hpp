#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace meca {

enum class ErrorKind {
  NonSymmetric,
  NoConvergence,
  Degenerate,
  DimMismatch,
  BadShape,
  TooFewSamples,
  ConfigInvalid,
  NumericalDivergence,
  InsufficientRecords,
  BadParams,
  BadMagic,
  TruncatedFile,
  CountMismatch,
  IoError,
  ParseError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonSymmetric: return "NonSymmetric";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::BadShape: return "BadShape";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::NumericalDivergence: return "NumericalDivergence";
    case ErrorKind::InsufficientRecords: return "InsufficientRecords";
    case ErrorKind::BadParams: return "BadParams";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace meca
