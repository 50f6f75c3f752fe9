#pragma once

#include <stdexcept>
#include <string>

namespace motif {

/// Malformed or out-of-contract input (bad shapes, bad records, bad indices).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent configuration (unknown keys, C % H != 0, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Loss or parameters became non-finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace motif
