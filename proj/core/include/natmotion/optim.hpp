#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "natmotion/autograd.hpp"
#include "natmotion/tensor.hpp"

namespace natmotion {

using TensorMap = std::map<std::string, Tensor>;

/// Bias-corrected ADAM moments plus an exponentially decayed learning rate:
/// lr = base_lr * decay_per_epoch^epoch.
struct AdamState {
  TensorMap m;
  TensorMap v;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_per_epoch = 1.0;

  double learning_rate() const;
};

/// One ADAM update of every entry of `params`; `grads` must cover them all
/// with matching shapes and finite values. Throws ShapeError / NumericError.
void adam_step(TensorMap& params, const GradMap& grads, AdamState& state);

/// Global L2 norm over all gradients, in key order.
double global_norm(const GradMap& grads);

/// Rescales every gradient by max_norm / g when the global norm g exceeds
/// max_norm. Returns the norm before clipping.
double clip_grad_norm(GradMap& grads, double max_norm);

}  // namespace natmotion
