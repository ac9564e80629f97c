#pragma once

#include <stdexcept>
#include <string>

namespace stpconv {

// Tensor shapes or layer geometry do not line up.
class ShapeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration (bad hyperparameters, unknown config keys, ...).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed files, missing inputs, incomplete coverage.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// API misuse, e.g. backward called with intermediates from a different forward.
class ContractError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace stpconv
