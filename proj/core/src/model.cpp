#include "natmotion/model.hpp"

#include <cmath>
#include <stdexcept>

#include "natmotion/error.hpp"
#include "natmotion/ops.hpp"

namespace natmotion {

std::string to_string(ModelKind kind) { return kind == ModelKind::nat ? "nat" : "ar"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "nat") return ModelKind::nat;
  if (name == "ar") return ModelKind::ar;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

PosEncConfig ModelConfig::posenc(std::size_t horizon_frames) const {
  return PosEncConfig{kContextWidth, alpha, beta, horizon_frames};
}

void ModelConfig::validate() const {
  if (tree.joints() == 0) throw std::invalid_argument("model needs at least one joint");
  if (encoder_ks % 2 == 0) throw std::invalid_argument("encoder kernel size must be odd");
  if (class_names.empty()) throw std::invalid_argument("model needs at least one action class");
  if (given_frames == 0 || horizon == 0) throw std::invalid_argument("window lengths must be >= 1");
  if (arc_dropout < 0.0 || arc_dropout >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  posenc(horizon).validate();
  parse_euler_order(euler_order);
}

std::size_t parameter_count(const Parameters& params) {
  std::size_t total = 0;
  for (const auto& [path, t] : params.trainable) total += t.size();
  return total;
}

namespace {

class Initializer {
 public:
  Initializer(Parameters& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void weight(const std::string& path, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng_.uniform(-bound, bound);
    params_.trainable[path] = std::move(t);
  }

  void constant(const std::string& path, Shape shape, double value) {
    params_.trainable[path] = Tensor(std::move(shape), value);
  }

  void batch_norm(const std::string& prefix, std::size_t channels) {
    constant(prefix + ".gamma", {channels}, 1.0);
    constant(prefix + ".beta", {channels}, 0.0);
    params_.buffers[prefix + ".running_mean"] = Tensor({channels}, 0.0);
    params_.buffers[prefix + ".running_var"] = Tensor({channels}, 1.0);
  }

  void block(const std::string& prefix, std::size_t c_in, std::size_t c_out, std::size_t ks) {
    weight(prefix + ".gcn.weight", {c_in, c_in}, c_in);
    batch_norm(prefix + ".gcn.bn", c_in);
    weight(prefix + ".tcn.weight", {c_out, c_in, ks}, c_in * ks);
    constant(prefix + ".tcn.bias", {c_out}, 0.0);
    batch_norm(prefix + ".tcn.bn", c_out);
    if (c_in != c_out) weight(prefix + ".shortcut.weight", {c_out, c_in, 1}, c_in);
  }

  void linear(const std::string& prefix, std::size_t in, std::size_t out) {
    weight(prefix + ".weight", {in, out}, in);
    constant(prefix + ".bias", {out}, 0.0);
  }

 private:
  Parameters& params_;
  Rng rng_;
};

}  // namespace

Model make_model(ModelKind kind, const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model model;
  model.kind = kind;
  model.config = config;
  model.adjacency = normalized_adjacency(config.tree, config.graph);

  Initializer init(model.params, seed);
  std::size_t c_in = 4;
  for (std::size_t i = 0; i < kEncoderChannels.size(); ++i) {
    init.block("encoder.block" + std::to_string(i), c_in, kEncoderChannels[i], config.encoder_ks);
    c_in = kEncoderChannels[i];
  }
  if (kind == ModelKind::nat) {
    c_in = kContextWidth;
    for (std::size_t i = 0; i < kDecoderChannels.size(); ++i) {
      init.block("decoder.block" + std::to_string(i), c_in, kDecoderChannels[i], 1);
      c_in = kDecoderChannels[i];
    }
    init.linear("arc.fc1", kContextWidth, config.arc_hidden1);
    init.linear("arc.fc2", config.arc_hidden1, config.arc_hidden2);
    init.linear("arc.fc3", config.arc_hidden2, config.classes());
  } else {
    const std::size_t pose = config.tree.joints() * 4;
    init.linear("ar.fc1", pose + kContextWidth, config.ar_hidden);
    init.linear("ar.fc2", config.ar_hidden, pose);
  }
  return model;
}

Forward::Forward(Tape& tape, const Model& model, Mode mode) : tape_(tape), model_(model), mode_(mode) {}

Forward& Forward::update_buffers(Parameters* target) {
  buffer_target_ = target;
  return *this;
}

Forward& Forward::dropout_rng(Rng* rng) {
  rng_ = rng;
  return *this;
}

Forward& Forward::freeze_parameters(bool frozen) {
  frozen_ = frozen;
  return *this;
}

Forward& Forward::bn_identity(bool enabled) {
  bn_identity_ = enabled;
  return *this;
}

Var Forward::param(const std::string& path) {
  if (auto it = bound_.find(path); it != bound_.end()) return it->second;
  auto it = model_.params.trainable.find(path);
  if (it == model_.params.trainable.end()) throw std::out_of_range("no parameter named " + path);
  Var v = frozen_ ? tape_.constant(it->second) : tape_.leaf(path, it->second);
  bound_.emplace(path, v);
  return v;
}

const Tensor& Forward::buffer(const std::string& path) const {
  auto it = model_.params.buffers.find(path);
  if (it == model_.params.buffers.end()) throw std::out_of_range("no buffer named " + path);
  return it->second;
}

Var Forward::batch_norm(const Var& x, const std::string& prefix) {
  if (bn_identity_) return x;
  const Var gamma = param(prefix + ".gamma");
  const Var beta = param(prefix + ".beta");
  const double eps = model_.config.bn_eps;
  if (mode_ == Mode::eval) {
    return ops::batch_norm_eval(x, gamma, beta, buffer(prefix + ".running_mean"), buffer(prefix + ".running_var"),
                                eps);
  }
  ops::BatchStats stats;
  Var out = ops::batch_norm_train(x, gamma, beta, eps, &stats);
  if (buffer_target_) {
    const double momentum = model_.config.bn_momentum;
    Tensor& mean = buffer_target_->buffers.at(prefix + ".running_mean");
    Tensor& var = buffer_target_->buffers.at(prefix + ".running_var");
    const double n = static_cast<double>(stats.count);
    const double unbias = stats.count > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - momentum) * mean[c] + momentum * stats.mean[c];
      var[c] = (1.0 - momentum) * var[c] + momentum * stats.biased_var[c] * unbias;
    }
  }
  return out;
}

Var Forward::dropout(const Var& x, double rate) {
  if (mode_ != Mode::train || rng_ == nullptr || rate == 0.0) return x;
  return ops::mul(x, tape_.constant(ops::dropout_mask(x.shape(), rate, *rng_)));
}

Var gcn_forward(Forward& fw, const Var& h, const std::string& prefix) {
  const Var w = fw.param(prefix + ".weight");
  Var out = ops::joint_mix(h, fw.model().adjacency);
  out = ops::channel_mix(out, w);
  out = fw.batch_norm(out, prefix + ".bn");
  return ops::leaky_relu(out, fw.leaky_slope());
}

Var tcn_forward(Forward& fw, const Var& h, const std::string& prefix) {
  Var out = ops::temporal_conv(h, fw.param(prefix + ".weight"), fw.param(prefix + ".bias"));
  out = fw.batch_norm(out, prefix + ".bn");
  return ops::leaky_relu(out, fw.leaky_slope());
}

Var block_forward(Forward& fw, const Var& h, const std::string& prefix, bool with_skip) {
  const Var branch = tcn_forward(fw, gcn_forward(fw, h, prefix + ".gcn"), prefix + ".tcn");
  if (!with_skip) return branch;
  const std::string shortcut = prefix + ".shortcut.weight";
  if (fw.model().params.trainable.contains(shortcut)) {
    return ops::add(branch, ops::temporal_conv(h, fw.param(shortcut), Var{}));
  }
  return ops::add(branch, h);
}

Var encode_context(Forward& fw, const Var& observed) {
  if (observed.value().rank() != 4 || observed.dim(3) != 4) {
    throw ShapeError("encode_context: expected [B, N, J, 4], got " + to_string(observed.shape()));
  }
  if (observed.dim(1) == 0) throw ShapeError("encode_context: empty observation");
  if (observed.dim(2) != fw.model().adjacency.dim(0)) {
    throw ShapeError("encode_context: " + std::to_string(observed.dim(2)) + " joints, model has " +
                     std::to_string(fw.model().adjacency.dim(0)));
  }
  Var h = ops::permute(observed, {0, 3, 1, 2});
  for (std::size_t i = 0; i < kEncoderChannels.size(); ++i) {
    h = block_forward(fw, h, "encoder.block" + std::to_string(i));
  }
  return ops::mean_pool_tj(h);
}

Var decode_frames(Forward& fw, const Var& context, const Var& seed, const Tensor& positions,
                  const Tensor* residual_offset) {
  if (positions.rank() != 2 || positions.dim(0) == 0) {
    throw std::invalid_argument("decode_frames: horizon must be >= 1");
  }
  if (seed.value().rank() != 3 || seed.dim(2) != 4 || seed.dim(0) != context.dim(0)) {
    throw ShapeError("decode_frames: seed pose must be [B, J, 4], got " + to_string(seed.shape()));
  }
  const std::size_t joints = seed.dim(1);
  Var h = ops::tile_frames(context, positions, joints);
  for (std::size_t i = 0; i < kDecoderChannels.size(); ++i) {
    h = block_forward(fw, h, "decoder.block" + std::to_string(i));
  }
  Var residual = ops::permute(h, {0, 2, 3, 1});
  if (residual_offset) residual = ops::add(residual, fw.tape().constant(*residual_offset));
  return ops::add_seed(residual, seed);
}

Var arc_logits(Forward& fw, const Var& context) {
  const double rate = fw.model().config.arc_dropout;
  Var h = ops::linear(context, fw.param("arc.fc1.weight"), fw.param("arc.fc1.bias"));
  h = ops::leaky_relu(fw.dropout(h, rate), fw.leaky_slope());
  h = ops::linear(h, fw.param("arc.fc2.weight"), fw.param("arc.fc2.bias"));
  h = ops::leaky_relu(fw.dropout(h, rate), fw.leaky_slope());
  return ops::linear(h, fw.param("arc.fc3.weight"), fw.param("arc.fc3.bias"));
}

Var arc_classify(Forward& fw, const Var& context) { return ops::log_softmax(arc_logits(fw, context)); }

NatOutputs nat_forward(Forward& fw, const Var& observed, std::size_t horizon, const Tensor* residual_offset) {
  if (horizon == 0) throw std::invalid_argument("nat_forward: horizon must be >= 1");
  NatOutputs out;
  out.context = encode_context(fw, observed);
  const Var seed = ops::select_frame(observed, observed.dim(1) - 1);
  out.predictions =
      decode_frames(fw, out.context, seed, embedding_table(fw.model().config.posenc(horizon)), residual_offset);
  out.logits = arc_logits(fw, out.context);
  return out;
}

namespace {

Var ar_step(Forward& fw, const Var& prev, const Var& context) {
  Var h = ops::linear(ops::concat_cols(prev, context), fw.param("ar.fc1.weight"), fw.param("ar.fc1.bias"));
  h = ops::leaky_relu(h, fw.leaky_slope());
  return ops::linear(h, fw.param("ar.fc2.weight"), fw.param("ar.fc2.bias"));
}

}  // namespace

Var ar_rollout(Forward& fw, const Var& context, const Var& seed, std::size_t horizon, const Tensor* first_offset) {
  if (horizon == 0) throw std::invalid_argument("ar_rollout: horizon must be >= 1");
  const std::size_t batch = seed.dim(0), joints = seed.dim(1);
  Var prev = ops::reshape(seed, {batch, joints * 4});
  std::vector<Var> frames;
  frames.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    Var step = ar_step(fw, prev, context);
    if (t == 0 && first_offset) {
      step = ops::add(step, fw.tape().constant(first_offset->reshaped({batch, joints * 4})));
    }
    prev = ops::add(prev, step);
    frames.push_back(prev);
  }
  return ops::reshape(ops::stack_frames(frames), {batch, horizon, joints, 4});
}

Var ar_teacher_forced(Forward& fw, const Var& context, const Var& seed, const Var& truth) {
  if (truth.value().rank() != 4 || truth.dim(0) != seed.dim(0) || truth.dim(2) != seed.dim(1) || truth.dim(3) != 4) {
    throw ShapeError("ar_teacher_forced: truth " + to_string(truth.shape()) + " for seed " + to_string(seed.shape()));
  }
  const std::size_t batch = seed.dim(0), joints = seed.dim(1), horizon = truth.dim(1);
  std::vector<Var> frames;
  frames.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const Var prev = ops::reshape(t == 0 ? seed : ops::select_frame(truth, t - 1), {batch, joints * 4});
    frames.push_back(ops::add(prev, ar_step(fw, prev, context)));
  }
  return ops::reshape(ops::stack_frames(frames), {batch, horizon, joints, 4});
}

Var ar_forward(Forward& fw, const Var& observed, std::size_t horizon, const Tensor* first_offset) {
  const Var context = encode_context(fw, observed);
  const Var seed = ops::select_frame(observed, observed.dim(1) - 1);
  return ar_rollout(fw, context, seed, horizon, first_offset);
}

Prediction predict(const Model& model, const Tensor& observed, std::size_t horizon, const Tensor* residual_offset) {
  Tape tape;
  Forward fw(tape, model, Mode::eval);
  fw.freeze_parameters();
  const Var x = tape.constant(observed);
  Prediction out;
  if (model.kind == ModelKind::nat) {
    const NatOutputs nat = nat_forward(fw, x, horizon, residual_offset);
    out.frames = nat.predictions.value();
    out.probabilities = ops::softmax(nat.logits).value();
  } else {
    const Tensor* first = nullptr;
    Tensor first_frame;
    if (residual_offset) {
      const std::size_t batch = residual_offset->dim(0), inner = residual_offset->size() / (batch * horizon);
      first_frame = Tensor({batch, inner / 4, 4});
      for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(residual_offset->ptr() + b * horizon * inner, inner, first_frame.ptr() + b * inner);
      }
      first = &first_frame;
    }
    out.frames = ar_forward(fw, x, horizon, first).value();
  }
  return out;
}

Tensor last_frame(const Tensor& observed) {
  if (observed.rank() != 4) throw ShapeError("last_frame: expected [B, N, J, 4]");
  const std::size_t batch = observed.dim(0), frames = observed.dim(1);
  const std::size_t inner = observed.dim(2) * observed.dim(3);
  Tensor out({batch, observed.dim(2), observed.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(observed.ptr() + (b * frames + frames - 1) * inner, inner, out.ptr() + b * inner);
  }
  return out;
}

}  // namespace natmotion
