// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pm {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape / extent misuse.
struct DimError : Error {
  using Error::Error;
};

/// Malformed or inconsistent input files and datasets.
struct DataError : Error {
  using Error::Error;
};

/// Numerical failure: NaN/Inf values, degenerate variance, non-finite loss.
struct NumericError : Error {
  using Error::Error;
};

/// Bad command-line or config usage.
struct UsageError : Error {
  using Error::Error;
};

}  // namespace pm
