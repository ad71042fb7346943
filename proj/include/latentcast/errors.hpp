#pragma once

#include <stdexcept>
#include <string>

namespace latentcast {

/// Invalid model structure, hyperparameters or config file.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (negative counts, gaps, dimension mismatch).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or singular systems inside the numerical core.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step = -1)
      : std::runtime_error(step >= 0 ? what + " (t=" + std::to_string(step) + ")" : what),
        step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Newton-Raphson failed to produce a descent step or diverged.
class ModeFindingError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Requested evaluation window lies outside the forecast horizon.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

}  // namespace latentcast
