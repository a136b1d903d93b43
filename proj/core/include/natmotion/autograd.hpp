#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "natmotion/tensor.hpp"

namespace natmotion {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar with respect to every named leaf, keyed by leaf path.
using GradMap = std::map<std::string, Tensor>;

/// Receives the node's output value and upstream gradient, and adds into the
/// gradient slot of each input that needs one (nullptr otherwise).
using BackwardFn =
    std::function<void(const Tensor& output, const Tensor& grad_output, std::span<Tensor* const> input_grads)>;

/// Linear record of executed primitives. Node ids are a topological order by
/// construction. A tape is single-threaded; one training step owns one tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);

  /// Trainable leaf. Registering the same path twice returns the first leaf.
  Var leaf(const std::string& path, Tensor value);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  enum class Retain { all, release };

  /// Reverse sweep seeded with d(loss)/d(loss) = 1. With Retain::release the
  /// node values are dropped as the sweep passes them, leaving the tape unusable.
  GradMap backward(const Var& loss, Retain retain = Retain::all);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string leaf_path;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> leaves_;
  bool consumed_ = false;
};

}  // namespace natmotion
