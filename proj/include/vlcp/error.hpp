#pragma once

#include <stdexcept>
#include <string>

namespace vlcp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that cannot be combined, e.g. matmul inner extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range hyperparameter (non-positive temperature, image size, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an operation, or a degenerate normalization.
class NumericalError : public Error {
 public:
  NumericalError(std::string op, const std::string& what)
      : Error(op + ": " + what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class TokenizerError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace vlcp
