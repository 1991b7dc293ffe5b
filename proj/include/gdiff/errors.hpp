#pragma once

#include <stdexcept>
#include <string>

namespace gdiff {

// Base for all library errors; subtypes let callers and tests distinguish
// contract violations from bad inputs.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions disagree.
struct DimensionError : Error {
  using Error::Error;
};

// An index (token, timestep, class) is out of its valid range.
struct IndexError : Error {
  using Error::Error;
};

// Inconsistent or unusable configuration (missing files, bad strategy,
// mismatched checkpoint).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input file; message carries file and line context.
struct ParseError : Error {
  using Error::Error;
};

// A key (surgeon id, feature key) is not present where required.
struct LookupError : Error {
  using Error::Error;
};

}  // namespace gdiff
