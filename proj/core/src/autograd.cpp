#include "natmotion/autograd.hpp"

#include <stdexcept>

#include "natmotion/error.hpp"

namespace natmotion {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  nodes_.push_back(Node{std::move(value), {}, {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(const std::string& path, Tensor value) {
  if (auto it = leaves_.find(path); it != leaves_.end()) return Var(this, it->second);
  value.set_requires_grad(true);
  nodes_.push_back(Node{std::move(value), {}, {}, true, path});
  leaves_.emplace(path, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::logic_error("Var recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
#ifndef NDEBUG
  if (!node.value.all_finite()) {
    bool finite_inputs = true;
    for (std::size_t id : node.inputs) finite_inputs = finite_inputs && nodes_[id].value.all_finite();
    if (finite_inputs) throw NumericError("non-finite output from finite inputs");
  }
#endif
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

GradMap Tape::backward(const Var& loss, Retain retain) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  if (consumed_) throw std::logic_error("backward: tape values were released by an earlier sweep");
  const Tensor& loss_value = nodes_[loss.id()].value;
  if (loss_value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + to_string(loss_value.shape()));
  }

  GradMap result;
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id()] = Tensor(loss_value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || grads[id].empty()) continue;
    if (!node.leaf_path.empty()) {
      result.emplace(node.leaf_path, std::move(grads[id]));
      continue;
    }
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const std::size_t in = node.inputs[i];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
      slots[i] = &grads[in];
    }
    node.backward(node.value, grads[id], slots);
    grads[id] = Tensor();
    if (retain == Retain::release) {
      node.value = Tensor();
      node.backward = nullptr;
    }
  }
  if (retain == Retain::release) consumed_ = true;

  // Leaves that were registered but never reached get explicit zeros.
  for (const auto& [path, id] : leaves_) {
    if (!result.contains(path)) result.emplace(path, Tensor(nodes_[id].value.shape(), 0.0));
  }
  return result;
}

}  // namespace natmotion
