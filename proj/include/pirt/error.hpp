#pragma once

#include <stdexcept>
#include <string>

namespace pirt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or other numerical breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (model dims, dataset, run options).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range scalar parameter (sigma <= 0, even kernel, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pirt
