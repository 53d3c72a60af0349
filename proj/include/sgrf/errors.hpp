// Copyright Contributors to the sgrf Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace sgrf {

/// Base class for all sgrf errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input text (scene files, configs, checkpoints).
struct ParseError : Error {
  using Error::Error;
};

/// Structurally valid input violating a documented invariant.
struct ValidationError : Error {
  using Error::Error;
};

/// Reference to a frame, track, class, or latent that does not exist.
struct LookupError : Error {
  using Error::Error;
};

/// Numerical failure during evaluation (non-finite values).
struct EvalError : Error {
  using Error::Error;
};

}  // namespace sgrf
