#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace affconv {

enum class ErrorCode {
  InvalidArgument,
  InvalidGraph,
  ShapeMismatch,
  IsolatedVertex,
  SelfLoopPresent,
  MissingPositions,
  NonManifoldVertex,
  DisconnectedMesh,
  NotScalarLoss,
  DetachedNode,
  BackwardTwice,
  MissingPseudoCoords,
  EmptyNeighborhood,
  SpiralUnavailable,
  PseudoCoordOutOfRange,
  SingularSystem,
  WrongKernel,
  DimensionMismatch,
  InconsistentChannels,
  LabelOutOfRange,
  ParseError,
  IoError,
  NumericalFailure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidGraph: return "InvalidGraph";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IsolatedVertex: return "IsolatedVertex";
    case ErrorCode::SelfLoopPresent: return "SelfLoopPresent";
    case ErrorCode::MissingPositions: return "MissingPositions";
    case ErrorCode::NonManifoldVertex: return "NonManifoldVertex";
    case ErrorCode::DisconnectedMesh: return "DisconnectedMesh";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::DetachedNode: return "DetachedNode";
    case ErrorCode::BackwardTwice: return "BackwardTwice";
    case ErrorCode::MissingPseudoCoords: return "MissingPseudoCoords";
    case ErrorCode::EmptyNeighborhood: return "EmptyNeighborhood";
    case ErrorCode::SpiralUnavailable: return "SpiralUnavailable";
    case ErrorCode::PseudoCoordOutOfRange: return "PseudoCoordOutOfRange";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::WrongKernel: return "WrongKernel";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InconsistentChannels: return "InconsistentChannels";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

/// Numerical failures map to CLI exit code 2, everything else to 1.
inline bool is_numerical(ErrorCode code) {
  return code == ErrorCode::SingularSystem || code == ErrorCode::NumericalFailure;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace affconv
