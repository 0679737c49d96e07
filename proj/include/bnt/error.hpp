#pragma once

#include <stdexcept>
#include <string>

namespace bnt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unusable input data (files, datasets, dimensions).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition on a configuration or hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown during fitting (non-finite loss or objective).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace bnt
