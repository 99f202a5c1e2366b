#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rankprune {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise malformed numeric input.
class InvalidInputError : public Error {
public:
  using Error::Error;
};

/// An argument lies outside the domain of the operation (k out of range, delta <= 0, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Frobenius norm at or below the configured floor; the rank term is undefined.
class DegenerateWeightError : public Error {
public:
  using Error::Error;
};

/// sigma_k and sigma_{k+1} coincide, so the truncated SVD (and its gradient) is not unique.
class DegenerateSpectrumError : public Error {
public:
  using Error::Error;
};

/// Mask budgets that cannot be met from the current mask state.
class ScheduleError : public Error {
public:
  using Error::Error;
};

/// Inconsistent layer shapes or network configuration.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Operation attempted on state that no longer matches (e.g. a stale forward cache).
class InvalidStateError : public Error {
public:
  using Error::Error;
};

/// Configuration file problem. `line()` is 0 when the error is not tied to a line.
class ConfigError : public Error {
public:
  ConfigError(const std::string& msg, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Generic malformed-file error.
class FormatError : public Error {
public:
  using Error::Error;
};

class IdxMagicError : public FormatError {
public:
  using FormatError::FormatError;
};

class IdxTruncatedError : public FormatError {
public:
  using FormatError::FormatError;
};

class IdxCountMismatchError : public FormatError {
public:
  using FormatError::FormatError;
};

/// Checkpoint written by an incompatible format version.
class CheckpointVersionError : public FormatError {
public:
  using FormatError::FormatError;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace rankprune
