#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace jmcal {

enum class ErrorKind {
  InvalidArgument,
  NonConvergence,
  SingularFit,
  SingularV,
  SingularQ,
  ThinStratum,
  MissingCoverage,
  Separation,
  QuadratureUnstable,
  TooManyFailures,
  ParseError,
  GridMismatch,
  ValidationFailed,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Process exit code associated with an error kind: 2 for input/output
// problems, 1 for everything raised by the models.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace jmcal
