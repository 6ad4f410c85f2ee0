#pragma once

#include <stdexcept>
#include <string>

namespace lacuna {

enum class ErrorCode {
  InvalidArgument,
  ConfigError,
  NonPositiveP,
  StepUnderflow,
  GridMismatch,
  ScanTooCoarse,
  DegenerateEdge,
  KTooLarge,
  KZero,
  OnSpectrum,
  MissingDerivativeChannel,
  GridTooCoarse,
  NotInvertible,
  NoConvergence,
  NonDecaying,
  WindowTouchesBand,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::NonPositiveP: return "NonPositiveP";
    case ErrorCode::StepUnderflow: return "StepUnderflow";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::ScanTooCoarse: return "ScanTooCoarse";
    case ErrorCode::DegenerateEdge: return "DegenerateEdge";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::KZero: return "KZero";
    case ErrorCode::OnSpectrum: return "OnSpectrum";
    case ErrorCode::MissingDerivativeChannel: return "MissingDerivativeChannel";
    case ErrorCode::GridTooCoarse: return "GridTooCoarse";
    case ErrorCode::NotInvertible: return "NotInvertible";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NonDecaying: return "NonDecaying";
    case ErrorCode::WindowTouchesBand: return "WindowTouchesBand";
  }
  return "Unknown";
}

/// True for errors caused by bad input rather than by a numerical breakdown.
inline bool is_validation_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigError:
    case ErrorCode::NonPositiveP:
    case ErrorCode::GridMismatch:
    case ErrorCode::DegenerateEdge:
    case ErrorCode::KZero:
    case ErrorCode::OnSpectrum:
    case ErrorCode::MissingDerivativeChannel:
    case ErrorCode::GridTooCoarse:
    case ErrorCode::WindowTouchesBand:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace lacuna
