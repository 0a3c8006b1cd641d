#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gfcn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A scalar parameter is outside its legal range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Value-level validation failure (label out of range, asymmetric matrix, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents; carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

/// Metric requested from an empty confusion matrix.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff engine (e.g. backward twice on the same loss).
class AutodiffError : public Error {
 public:
  using Error::Error;
};

}  // namespace gfcn
