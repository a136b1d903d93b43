#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "natmotion/autograd.hpp"
#include "natmotion/optim.hpp"
#include "natmotion/posenc.hpp"
#include "natmotion/rng.hpp"
#include "natmotion/skeleton.hpp"

namespace natmotion {

inline constexpr std::size_t kContextWidth = 256;
inline constexpr std::array<std::size_t, 6> kEncoderChannels{64, 64, 128, 128, 256, 256};
inline constexpr std::array<std::size_t, 6> kDecoderChannels{256, 128, 128, 64, 64, 4};

enum class ModelKind { nat, ar };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Architecture plus the data conventions a checkpoint must carry to be
/// evaluated later.
struct ModelConfig {
  KinematicTree tree = KinematicTree::branched(8);
  GraphSpec graph;
  std::vector<std::string> class_names{"class0", "class1", "class2"};
  std::size_t encoder_ks = 9;
  double alpha = 10.0;
  double beta = 500.0;
  std::size_t given_frames = 50;  // N
  std::size_t horizon = 10;       // M used in training
  double fps = 25.0;
  std::string euler_order = "zyx";
  std::size_t arc_hidden1 = 128;
  std::size_t arc_hidden2 = 64;
  double arc_dropout = 0.5;
  double leaky_slope = 0.01;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::size_t ar_hidden = 256;

  std::size_t classes() const { return class_names.size(); }
  PosEncConfig posenc(std::size_t horizon_frames) const;
  /// Throws std::invalid_argument on inconsistent values (even ks, no classes...).
  void validate() const;
};

struct Parameters {
  TensorMap trainable;
  TensorMap buffers;  // batch-norm running statistics
};

std::size_t parameter_count(const Parameters& params);

struct Model {
  ModelKind kind = ModelKind::nat;
  ModelConfig config;
  Parameters params;
  Tensor adjacency;  // normalized, derived from config.tree / config.graph
};

/// Fan-in scaled uniform weights, zero biases, unit BN scale, zero BN shift.
Model make_model(ModelKind kind, const ModelConfig& config, std::uint64_t seed);

enum class Mode { train, eval };

/// Per-pass evaluation context: binds parameters to tape nodes and carries
/// the mode switches.
///
/// Batch normalization uses batch statistics in train mode and running
/// statistics in eval mode. Train-mode statistics couple every frame in the
/// batch, so per-frame independence of the decoder holds in eval mode only.
class Forward {
 public:
  Forward(Tape& tape, const Model& model, Mode mode);

  Tape& tape() { return tape_; }
  const Model& model() const { return model_; }
  Mode mode() const { return mode_; }

  /// Running-statistic updates in train mode go here (skipped when unset).
  Forward& update_buffers(Parameters* target);
  /// Dropout masks are drawn from this generator in train mode; without one,
  /// dropout is disabled.
  Forward& dropout_rng(Rng* rng);
  /// Parameters become tape constants: no gradients flow into them.
  Forward& freeze_parameters(bool frozen = true);
  /// Test switch: every batch normalization becomes the identity map.
  Forward& bn_identity(bool enabled = true);

  Var param(const std::string& path);
  const Tensor& buffer(const std::string& path) const;

  Var batch_norm(const Var& x, const std::string& prefix);
  Var dropout(const Var& x, double rate);
  double leaky_slope() const { return model_.config.leaky_slope; }

 private:
  Tape& tape_;
  const Model& model_;
  Mode mode_;
  Parameters* buffer_target_ = nullptr;
  Rng* rng_ = nullptr;
  bool frozen_ = false;
  bool bn_identity_ = false;
  std::map<std::string, Var> bound_;
};

/// sigma(BN(A_norm . h . W)) on [B, C, T, J] activations.
Var gcn_forward(Forward& fw, const Var& h, const std::string& prefix);
/// sigma(BN(conv_T(h))) with zero same-padding.
Var tcn_forward(Forward& fw, const Var& h, const std::string& prefix);
/// TCN(GCN(h)) + shortcut(h); the shortcut is a 1x1 projection iff channels change.
Var block_forward(Forward& fw, const Var& h, const std::string& prefix, bool with_skip = true);

/// [B, N, J, 4] observed frames -> [B, 256] context feature.
Var encode_context(Forward& fw, const Var& observed);

/// Frame-parallel decoder: y_t = y_0 + D(c + p(t)) for every row t of
/// `positions` ([M, 256], row r = p(r + 1) for a full table). `seed` is
/// [B, J, 4]. `residual_offset`, if non-null, is added to D's [B, M, J, 4]
/// output before the seed (used to inject perturbations).
Var decode_frames(Forward& fw, const Var& context, const Var& seed, const Tensor& positions,
                  const Tensor* residual_offset = nullptr);

/// ARC logits [B, C]; the class distribution is softmax of these.
Var arc_logits(Forward& fw, const Var& context);
/// log Softmax(ARC(c)).
Var arc_classify(Forward& fw, const Var& context);

struct NatOutputs {
  Var context;
  Var predictions;  // [B, M, J, 4]
  Var logits;       // [B, C]
};

/// encode -> (ARC, decode) with the last observed frame as the seed pose.
NatOutputs nat_forward(Forward& fw, const Var& observed, std::size_t horizon,
                       const Tensor* residual_offset = nullptr);

/// Sequential residual baseline: y_t = y_{t-1} + R([y_{t-1}, c]) with R a
/// two-layer perceptron. `first_offset` ([B, J, 4]) perturbs R's first output.
Var ar_rollout(Forward& fw, const Var& context, const Var& seed, std::size_t horizon,
               const Tensor* first_offset = nullptr);
Var ar_forward(Forward& fw, const Var& observed, std::size_t horizon, const Tensor* first_offset = nullptr);
/// Teacher forcing: frame t is y_{t-1} + R([y_{t-1}, c]) with y_{t-1} read
/// from `truth` ([B, M, J, 4]) instead of the previous prediction.
Var ar_teacher_forced(Forward& fw, const Var& context, const Var& seed, const Var& truth);

struct Prediction {
  Tensor frames;         // [B, M, J, 4]
  Tensor probabilities;  // [B, C]; empty for AR models
};

/// Eval-mode inference on a [B, N, J, 4] batch for either model kind.
Prediction predict(const Model& model, const Tensor& observed, std::size_t horizon,
                   const Tensor* residual_offset = nullptr);

/// Last observed frame of every window: [B, N, J, 4] -> [B, J, 4].
Tensor last_frame(const Tensor& observed);

}  // namespace natmotion
