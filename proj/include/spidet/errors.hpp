#pragma once

#include <stdexcept>
#include <string>

namespace spidet {

// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed caller input: bad shapes, out-of-range indices, invalid options.
struct InvalidInput : Error {
  using Error::Error;
};

// A numerical routine could not complete (rank deficiency, non-SPD matrix).
struct NumericalFailure : Error {
  using Error::Error;
};

// An iterative solver exhausted its iteration budget.
struct NonConvergence : Error {
  using Error::Error;
};

}  // namespace spidet
