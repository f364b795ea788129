#pragma once

#include <stdexcept>
#include <string>

namespace synth {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
struct DimensionError : Error {
  using Error::Error;
};

// NaN or Inf produced or consumed by an op.
struct NumericError : Error {
  using Error::Error;
};

// Softmax row with no allowed entry.
struct DegenerateRowError : Error {
  using Error::Error;
};

struct MaxLengthError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace synth
