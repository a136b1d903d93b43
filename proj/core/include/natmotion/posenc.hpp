#pragma once

#include <cstddef>
#include <vector>

#include "natmotion/tensor.hpp"

namespace natmotion {

/// Sinusoidal frame-index embedding:
///   p_{2i}(t)   = sin(alpha * t / beta^{2i / d_model})
///   p_{2i+1}(t) = cos(alpha * t / beta^{2i / d_model})
struct PosEncConfig {
  std::size_t d_model = 256;
  double alpha = 10.0;
  double beta = 500.0;
  std::size_t horizon = 10;

  /// Throws std::invalid_argument on odd/zero d_model, alpha <= 0, beta <= 1 or horizon 0.
  void validate() const;
};

std::vector<double> positional_embedding(std::size_t t, const PosEncConfig& cfg);

/// [horizon, d_model]; row r holds p(r + 1). Predicted frames are numbered
/// from 1, the seed pose being frame 0.
Tensor embedding_table(const PosEncConfig& cfg);

}  // namespace natmotion
