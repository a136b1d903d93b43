#include "natmotion/posenc.hpp"

#include <cmath>
#include <stdexcept>

namespace natmotion {

void PosEncConfig::validate() const {
  if (d_model < 2 || d_model % 2 != 0) throw std::invalid_argument("positional encoding d_model must be even and >= 2");
  if (!(alpha > 0.0)) throw std::invalid_argument("positional encoding alpha must be > 0");
  if (!(beta > 1.0)) throw std::invalid_argument("positional encoding beta must be > 1");
  if (horizon < 1) throw std::invalid_argument("positional encoding horizon must be >= 1");
}

std::vector<double> positional_embedding(std::size_t t, const PosEncConfig& cfg) {
  std::vector<double> out(cfg.d_model);
  const double d = static_cast<double>(cfg.d_model);
  for (std::size_t i = 0; i < cfg.d_model / 2; ++i) {
    const double angle = cfg.alpha * static_cast<double>(t) / std::pow(cfg.beta, static_cast<double>(2 * i) / d);
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

Tensor embedding_table(const PosEncConfig& cfg) {
  cfg.validate();
  Tensor table({cfg.horizon, cfg.d_model});
  for (std::size_t row = 0; row < cfg.horizon; ++row) {
    const auto p = positional_embedding(row + 1, cfg);
    std::copy(p.begin(), p.end(), table.ptr() + row * cfg.d_model);
  }
  return table;
}

}  // namespace natmotion
