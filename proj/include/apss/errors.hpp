#pragma once

#include <stdexcept>
#include <string>

namespace apss {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or signal shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid layer, STFT, model or optimizer configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a precondition (non-finite samples, zero-energy reference, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (WAV, manifest, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward() on a non-scalar tensor.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced during computation or training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace apss
