#pragma once

#include <stdexcept>
#include <string>

namespace ff {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Kernel/stride/padding do not fit the input, or sizes are unsupported.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Input outside an op's mathematical domain (e.g. log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// API misuse: backward on a tensor without a tape, and similar.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data (bad labels, identity leaks, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or file format does not match what the reader expects.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Internal bookkeeping violated (e.g. a trainable parameter missing its gradient).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// A statistic is undefined on the given data (single-class AUC, exhausted resampling).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace ff
