#pragma once

#include <stdexcept>
#include <string>

namespace medcl {

// Every failure that crosses a module boundary carries one of these codes so
// callers (and the CLI) can distinguish "bad input" from "internal bug"
// without parsing message strings.
enum class ErrorCode {
  InvalidArgument,     // caller passed something out of contract
  ConfigError,         // unreadable / unknown / ill-typed configuration
  IoError,             // file missing, unreadable, or unwritable
  FormatError,         // file exists but its contents violate the format
  ChecksumMismatch,    // payload bytes do not match the recorded checksum
  ShapeMismatch,       // array dimensions disagree with the manifest/header
  LabelOutOfRange,     // label/scribble value outside the declared classes
  VersionMismatch,     // format_version newer than this build understands
  NumericalError,      // NaN/Inf or divergence detected mid-computation
  InternalError,       // invariant broken; always a bug, never user input
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ConfigError: return "config error";
    case ErrorCode::IoError: return "io error";
    case ErrorCode::FormatError: return "format error";
    case ErrorCode::ChecksumMismatch: return "checksum mismatch";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::LabelOutOfRange: return "label out of range";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::NumericalError: return "numerical error";
    case ErrorCode::InternalError: return "internal error";
  }
  return "unknown error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

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

}  // namespace medcl
