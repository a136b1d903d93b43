#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "natmotion/data.hpp"
#include "natmotion/model.hpp"
#include "natmotion/optim.hpp"

namespace natmotion {

struct TrainConfig {
  ModelKind kind = ModelKind::nat;
  std::size_t iterations = 1000;
  std::size_t batch = 60;
  double lr = 1e-3;
  double decay = 0.9995;  // per epoch
  double clip = 0.1;
  double lambda_pnlty = 0.01;
  double lambda_cls = 0.01;
  std::uint64_t seed = 0;
  // Architecture / ablation switches.
  double alpha = 10.0;
  double beta = 500.0;
  std::size_t ks = 9;
  GraphSpec graph;
  // Windowing.
  std::size_t given = 50;
  std::size_t horizon = 10;
  std::size_t stride = 5;
  /// AR only: keep the encoder fixed (e.g. copied from a trained NAT model)
  /// and fit the recurrent head on cached context features.
  bool freeze_encoder = false;
  /// AR only: fit one-step predictions from ground-truth previous frames
  /// instead of free-running rollouts.
  bool teacher_forcing = false;

  void validate() const;
  WindowSpec windows() const { return {given, horizon, stride}; }
};

/// Model configuration implied by a training config and a dataset.
ModelConfig model_config(const TrainConfig& cfg, const Dataset& data);

struct LossBreakdown {
  double recst = 0.0;
  double pnlty = 0.0;
  double cls1 = 0.0;
  double cls2 = 0.0;
  double total = 0.0;
};

/// recst + lambda_pnlty * pnlty + lambda_cls * (cls1 + cls2).
double combine_losses(const LossBreakdown& parts, double lambda_pnlty, double lambda_cls);

/// Mean over (t, j) of the L1 distance between quaternions; shapes [..., 4].
double loss_recst(const Tensor& pred, const Tensor& truth);
/// Mean over (t, j) of (|q|^2 - 1)^2.
double loss_pnlty(const Tensor& pred);

struct ClassLoss {
  double value = 0.0;
  bool clamped = false;  // probs[label] fell below the 1e-12 floor
};
/// -log probs[label] with the probability floored at 1e-12.
ClassLoss loss_cls(std::span<const double> probs, std::size_t label);

struct Batch {
  Tensor observed;  // [B, N, J, 4]
  Tensor target;    // [B, M, J, 4]
  std::vector<std::size_t> labels;
};

Batch make_batch(const std::vector<Window>& windows, const std::vector<std::size_t>& indices);

struct StepOptions {
  /// When false the cycle term cls2 is still evaluated and reported but
  /// contributes no gradient.
  bool cycle_gradient = true;
  /// Train-mode BN running statistics are written here when set.
  Parameters* buffers = nullptr;
  /// Dropout masks; dropout is off when null.
  Rng* dropout = nullptr;
  /// Precomputed [B, 256] context features for AR models with a frozen encoder.
  const Tensor* context = nullptr;
};

struct StepResult {
  LossBreakdown loss;
  GradMap grads;  // covers every trainable parameter
};

/// One train-mode forward/backward pass of the combined objective. The NAT
/// objective runs c = E(X), Y^ = D(c, y0), o1 = ARC(c) and, when
/// lambda_cls > 0, the cycle pass o2 = ARC(E(Y^)). The AR objective is the
/// reconstruction and norm penalty of a free-running rollout.
StepResult objective_gradients(const Model& model, const Batch& batch, const TrainConfig& cfg,
                               const StepOptions& options = {});

struct IterationLog {
  std::size_t iteration = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

struct TrainResult {
  Model model;
  AdamState optimizer;
  std::vector<IterationLog> log;
};

using IterationCallback = std::function<void(const IterationLog&)>;

/// Minibatch training with per-epoch shuffling (an epoch is
/// floor(windows / batch) iterations), global-norm clipping, ADAM and
/// per-epoch learning-rate decay. Deterministic given cfg.seed. Throws
/// NumericError on a non-finite loss.
TrainResult train(Model model, const std::vector<Window>& windows, const TrainConfig& cfg,
                  const IterationCallback& on_iteration = {});

/// Context features [W, 256] of every window, eval mode, in chunks.
Tensor encode_windows(const Model& model, const std::vector<Window>& windows, std::size_t chunk = 32);

std::string loss_csv_header();
std::string loss_csv_row(const IterationLog& row);

}  // namespace natmotion
