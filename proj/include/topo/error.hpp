#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace topo {

enum class ErrorKind {
  MissingFile,
  ShapeMismatch,
  NonFiniteEntry,
  MetadataParse,
  IoError,
  InvalidBundle,
  DimensionOverflow,
  InvalidOrder,
  EmptySelection,
  InvalidArgument,
  NegativeAlpha,
  SolverDiverged,
  NonPositiveScale,
  MissingRiskHistory,
  LengthMismatch,
  DegenerateInput,
  NoValidSlice,
  InvalidSpec,
  TooLarge,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorKind::MetadataParse: return "MetadataParse";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidBundle: return "InvalidBundle";
    case ErrorKind::DimensionOverflow: return "DimensionOverflow";
    case ErrorKind::InvalidOrder: return "InvalidOrder";
    case ErrorKind::EmptySelection: return "EmptySelection";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NegativeAlpha: return "NegativeAlpha";
    case ErrorKind::SolverDiverged: return "SolverDiverged";
    case ErrorKind::NonPositiveScale: return "NonPositiveScale";
    case ErrorKind::MissingRiskHistory: return "MissingRiskHistory";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NoValidSlice: return "NoValidSlice";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::TooLarge: return "TooLarge";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace topo
