#pragma once

#include <stdexcept>
#include <string>

namespace cplvad {

// Every failure mode carries a distinct code so callers (and the CLI exit
// mapping) can tell data problems from numeric ones without string matching.
enum class ErrorCode {
  io,
  bad_magic,
  version_mismatch,
  truncated_payload,
  dimension_overflow,
  parse,
  validation,
  shape_mismatch,
  non_finite,
  precondition,
  undefined_metric,
  usage,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Exit-code class used by the CLI: 1 usage, 2 data, 3 numeric.
  int exit_class() const noexcept {
    switch (code_) {
      case ErrorCode::usage:
      case ErrorCode::precondition:
        return 1;
      case ErrorCode::non_finite:
        return 3;
      default:
        return 2;
    }
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace cplvad
