#pragma once

#include <stdexcept>
#include <string>

namespace prognos {

/// Input that violates a documented contract (bad matrix, bad π, malformed
/// file). The CLI maps these to exit code 1 and the API to 4xx.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// The inputs were well-formed but the computation cannot proceed
/// (singular solve, censored median, drift too small to fail).
class ComputationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NotErgodicError : public ComputationError {
public:
  using ComputationError::ComputationError;
};

class AlreadyFailedError : public ComputationError {
public:
  using ComputationError::ComputationError;
};

class DegenerateDriftError : public ComputationError {
public:
  using ComputationError::ComputationError;
};

class HorizonTooShortError : public ComputationError {
public:
  using ComputationError::ComputationError;
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public ValidationError {
public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

}  // namespace prognos
