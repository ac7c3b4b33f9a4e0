#pragma once

#include <stdexcept>
#include <string>

namespace dtam {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes that do not compose.
struct DimensionError : Error {
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (e.g. stddev <= 0).
struct DomainError : Error {
  using Error::Error;
};

// NaN/Inf produced or consumed by a numeric routine.
struct NumericError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data.
struct DataError : Error {
  using Error::Error;
};

// Checkpoint or manifest failed integrity checks.
struct CorruptionError : DataError {
  using DataError::DataError;
};

struct UsageError : Error {
  using Error::Error;
};

}  // namespace dtam
