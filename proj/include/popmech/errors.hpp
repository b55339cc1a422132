#pragma once

#include <stdexcept>
#include <string>

namespace popmech {

// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible array shapes; message names the operation and the shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Math-domain violation (log/sqrt of a negative value, etc.).
struct DomainError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data (dataset bundles, checkpoints).
struct DataError : Error {
  using Error::Error;
};

// Invalid configuration (schema violations, bad field values).
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values or failed numeric invariants at run time.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace popmech
