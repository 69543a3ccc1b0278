#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scatsynth {

enum class ErrorCode {
  InvalidArgument,
  GridTooSmall,
  FrameFailure,
  LengthMismatch,
  GridMismatch,
  CapExceeded,
  DigestMismatch,
  NonfiniteIterate,
  SingularSystem,
  RetryExhausted,
  UnsupportedFormat,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::GridTooSmall: return "grid-too-small";
    case ErrorCode::FrameFailure: return "frame-failure";
    case ErrorCode::LengthMismatch: return "length-mismatch";
    case ErrorCode::GridMismatch: return "grid-mismatch";
    case ErrorCode::CapExceeded: return "cap-exceeded";
    case ErrorCode::DigestMismatch: return "digest-mismatch";
    case ErrorCode::NonfiniteIterate: return "nonfinite-iterate";
    case ErrorCode::SingularSystem: return "singular-system";
    case ErrorCode::RetryExhausted: return "retry-exhausted";
    case ErrorCode::UnsupportedFormat: return "unsupported-format";
    case ErrorCode::IoError: return "io-error";
  }
  return "unknown";
}

/// Exception carrying a machine-readable code; the CLI maps codes to exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace scatsynth
