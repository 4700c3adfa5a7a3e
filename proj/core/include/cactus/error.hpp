#pragma once

#include <stdexcept>
#include <string>

namespace cactus {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer extents that do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File reading/writing and format violations.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required (e.g. a diverging loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cactus
