// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gvae {

enum class ErrorCode {
  // chem
  DuplicateBond,
  SelfLoop,
  IndexOutOfRange,
  UnknownElement,
  InvalidAtom,
  // smiles
  EmptyInput,
  UnknownSymbol,
  UnbalancedParenthesis,
  UnclosedRing,
  InvalidRingBond,
  DanglingBond,
  DisconnectedInput,
  Disconnected,
  // numerics
  ShapeMismatch,
  NotScalar,
  NonFiniteValue,
  InvalidArgument,
  SingularSystem,
  ZeroVector,
  LengthMismatch,
  // training / data
  EmptyDataset,
  MoleculeTooLarge,
  FileNotFound,
  BadHeader,
  EmptyAfterFiltering,
  IoError,
  VersionMismatch,
  CorruptTensor,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::DuplicateBond: return "DuplicateBond";
  case ErrorCode::SelfLoop: return "SelfLoop";
  case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
  case ErrorCode::UnknownElement: return "UnknownElement";
  case ErrorCode::InvalidAtom: return "InvalidAtom";
  case ErrorCode::EmptyInput: return "EmptyInput";
  case ErrorCode::UnknownSymbol: return "UnknownSymbol";
  case ErrorCode::UnbalancedParenthesis: return "UnbalancedParenthesis";
  case ErrorCode::UnclosedRing: return "UnclosedRing";
  case ErrorCode::InvalidRingBond: return "InvalidRingBond";
  case ErrorCode::DanglingBond: return "DanglingBond";
  case ErrorCode::DisconnectedInput: return "DisconnectedInput";
  case ErrorCode::Disconnected: return "Disconnected";
  case ErrorCode::ShapeMismatch: return "ShapeMismatch";
  case ErrorCode::NotScalar: return "NotScalar";
  case ErrorCode::NonFiniteValue: return "NonFiniteValue";
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::SingularSystem: return "SingularSystem";
  case ErrorCode::ZeroVector: return "ZeroVector";
  case ErrorCode::LengthMismatch: return "LengthMismatch";
  case ErrorCode::EmptyDataset: return "EmptyDataset";
  case ErrorCode::MoleculeTooLarge: return "MoleculeTooLarge";
  case ErrorCode::FileNotFound: return "FileNotFound";
  case ErrorCode::BadHeader: return "BadHeader";
  case ErrorCode::EmptyAfterFiltering: return "EmptyAfterFiltering";
  case ErrorCode::IoError: return "IoError";
  case ErrorCode::VersionMismatch: return "VersionMismatch";
  case ErrorCode::CorruptTensor: return "CorruptTensor";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without string
/// matching.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

} // namespace gvae
