#pragma once

#include <stdexcept>
#include <string>

namespace natmotion {

/// Malformed or inconsistent input data (sequence files, datasets, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced NaN/Inf or otherwise left the representable range.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not agree with an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace natmotion
