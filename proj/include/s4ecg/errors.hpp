#pragma once

#include <stdexcept>
#include <string>

namespace s4ecg {

// Invalid caller-supplied value (bad n, nonpositive rate, odd state size...).
class ArgumentError : public std::invalid_argument {
 public:
  explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

// Tensor shapes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Violated API contract, e.g. backward() from a non-scalar node.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// NaN/Inf gradients, bilinear pole hits, diverging losses.
class NumericalFault : public std::runtime_error {
 public:
  explicit NumericalFault(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or incompatible on-disk artifacts.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint whose tensors do not match the expected model configuration.
class ShapeError : public FormatError {
 public:
  explicit ShapeError(const std::string& what) : FormatError(what) {}
};

}  // namespace s4ecg
