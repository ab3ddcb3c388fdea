#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace rsr {

/// Broad failure class; the CLI maps each kind onto an exit code.
enum class ErrorKind {
  Usage,         // bad arguments or violated preconditions (exit 2)
  InvalidInput,  // malformed or inconsistent input data (exit 3)
  Numerical      // solver failure, budget exhaustion, regime problems (exit 4)
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::Numerical: return "numerical";
  }
  return "unknown";
}

/// Library exception. `code` is a short stable identifier such as
/// "dimension_mismatch" that tests and the CLI error record key on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string code, const std::string& message) {
  throw Error(kind, std::move(code), message);
}

inline void require(bool ok, const char* code, const std::string& message) {
  if (!ok) fail(ErrorKind::Usage, code, message);
}

}  // namespace rsr
