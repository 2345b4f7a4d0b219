// Exception hierarchy shared by every unismmc module.
#pragma once

#include <stdexcept>
#include <string>

namespace unismmc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or feature shapes.
struct DimensionError : Error {
  using Error::Error;
};

/// A row whose norm is too small to define a cosine similarity.
struct DegenerateInputError : Error {
  DegenerateInputError(std::size_t row, const std::string& what)
      : Error(what), sample_index(row) {}
  std::size_t sample_index;
};

/// API misuse, e.g. backward() on a non-scalar.
struct ContractError : Error {
  using Error::Error;
};

/// Operation called in the wrong lifecycle state (second backward pass).
struct StateError : Error {
  using Error::Error;
};

/// Invalid specs or configs.
struct ConfigError : Error {
  using Error::Error;
};

/// Rows of aligned arrays disagree in count.
struct AlignmentError : Error {
  using Error::Error;
};

/// Labels outside [0, K) and similar data problems.
struct DataError : Error {
  using Error::Error;
};

/// Malformed, truncated or version-mismatched files.
struct FormatError : Error {
  using Error::Error;
};

/// Non-finite gradients or losses during optimization.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace unismmc
