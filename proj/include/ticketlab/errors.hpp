#pragma once

#include <stdexcept>
#include <string>

namespace ticketlab {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numeric 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration, including shape/alignment mismatches.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or missing input data (IDX files, label ranges, empty sets).
struct DataError : Error {
  using Error::Error;
};

// Training/estimation blew up: non-finite gradients, collapsed gates, ...
struct NumericError : Error {
  using Error::Error;
};

// Structured shape mismatch; carries the offending segment name in the message.
struct ShapeError : ConfigError {
  using ConfigError::ConfigError;
};

}  // namespace ticketlab
