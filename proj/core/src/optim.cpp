#include "natmotion/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "natmotion/error.hpp"

namespace natmotion {

double AdamState::learning_rate() const { return base_lr * std::pow(decay_per_epoch, static_cast<double>(epoch)); }

void adam_step(TensorMap& params, const GradMap& grads, AdamState& state) {
  for (const auto& [path, value] : params) {
    auto it = grads.find(path);
    if (it == grads.end()) throw std::invalid_argument("adam_step: no gradient for " + path);
    if (it->second.shape() != value.shape()) {
      throw ShapeError("adam_step: gradient shape " + to_string(it->second.shape()) + " for parameter " + path +
                       " of shape " + to_string(value.shape()));
    }
    if (!it->second.all_finite()) throw NumericError("adam_step: non-finite gradient for " + path);
  }

  state.step += 1;
  const double lr = state.learning_rate();
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  for (auto& [path, value] : params) {
    const Tensor& g = grads.at(path);
    auto [m_it, m_new] = state.m.try_emplace(path, value.shape(), 0.0);
    auto [v_it, v_new] = state.v.try_emplace(path, value.shape(), 0.0);
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

double global_norm(const GradMap& grads) {
  double total = 0.0;
  for (const auto& [path, g] : grads) {
    for (double v : g.data()) total += v * v;
  }
  return std::sqrt(total);
}

double clip_grad_norm(GradMap& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [path, g] : grads) {
      for (double& v : g.data()) v *= factor;
    }
  }
  return norm;
}

}  // namespace natmotion
