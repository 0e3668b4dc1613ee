#pragma once

#include <stdexcept>
#include <string>

namespace objvid {

// Base class for all contract violations surfaced to callers.
// The CLI maps these to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or size mismatch between tensors; messages name both shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid configuration value (e.g. temporal interval exceeding clip length).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent on-disk data (tensor files, manifests, checkpoints).
struct FormatError : Error {
  using Error::Error;
};

// Numerically undefined request (e.g. cosine of a zero-norm vector).
struct NumericError : Error {
  using Error::Error;
};

// API misuse (e.g. backward from a non-scalar).
struct ContractError : Error {
  using Error::Error;
};

// Non-finite training loss; the CLI maps it to exit code 2.
struct NanAbortError : Error {
  using Error::Error;
};

}  // namespace objvid
