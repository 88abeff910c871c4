#pragma once

#include <stdexcept>
#include <string>

namespace texsr {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or lengths that do not fit together.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a precondition of the API (empty inputs, missing trace).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Unparseable or inconsistent run configuration.
class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Malformed file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf showed up where only finite values are allowed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Filesystem level failure (open, read, write).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace texsr
