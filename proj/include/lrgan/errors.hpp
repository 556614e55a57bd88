#pragma once

#include <stdexcept>
#include <string>

namespace lrgan {

/// Invalid configuration, shape mismatch or malformed input file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (e.g. non-scalar gradient output).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values, divergence or degenerate numeric state.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sampler exhausted its draw budget without producing a sample.
class StarvationError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace lrgan
