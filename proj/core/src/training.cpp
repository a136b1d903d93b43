#include "natmotion/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "natmotion/error.hpp"
#include "natmotion/ops.hpp"

namespace natmotion {

void TrainConfig::validate() const {
  if (iterations == 0) throw std::invalid_argument("iterations must be >= 1");
  if (batch == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(decay > 0.0) || decay > 1.0) throw std::invalid_argument("decay must be in (0, 1]");
  if (!(clip > 0.0)) throw std::invalid_argument("clip norm must be positive");
  if (lambda_pnlty < 0.0 || lambda_cls < 0.0) throw std::invalid_argument("loss weights must be >= 0");
  if (ks % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (freeze_encoder && kind != ModelKind::ar) throw std::invalid_argument("only AR training can freeze the encoder");
  if (teacher_forcing && kind != ModelKind::ar) throw std::invalid_argument("teacher forcing applies to AR training only");
  windows().validate();
}

ModelConfig model_config(const TrainConfig& cfg, const Dataset& data) {
  if (data.sequences.empty()) throw DataError("dataset is empty");
  ModelConfig mc;
  mc.tree = data.sequences.front().tree;
  mc.graph = cfg.graph;
  mc.class_names = data.class_names;
  mc.encoder_ks = cfg.ks;
  mc.alpha = cfg.alpha;
  mc.beta = cfg.beta;
  mc.given_frames = cfg.given;
  mc.horizon = cfg.horizon;
  mc.fps = data.sequences.front().fps;
  return mc;
}

double combine_losses(const LossBreakdown& parts, double lambda_pnlty, double lambda_cls) {
  return parts.recst + lambda_pnlty * parts.pnlty + lambda_cls * (parts.cls1 + parts.cls2);
}

double loss_recst(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("loss_recst: " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
  }
  if (pred.empty() || pred.shape().back() != 4) throw ShapeError("loss_recst: expected quaternions [..., 4]");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]);
  return total / static_cast<double>(pred.size() / 4);
}

double loss_pnlty(const Tensor& pred) {
  if (pred.empty() || pred.shape().back() != 4) throw ShapeError("loss_pnlty: expected quaternions [..., 4]");
  const std::size_t quats = pred.size() / 4;
  double total = 0.0;
  for (std::size_t q = 0; q < quats; ++q) {
    const double* p = pred.ptr() + 4 * q;
    const double excess = p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3] - 1.0;
    total += excess * excess;
  }
  return total / static_cast<double>(quats);
}

ClassLoss loss_cls(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw std::out_of_range("loss_cls: label out of range");
  constexpr double floor = 1e-12;
  const double p = probs[label];
  if (!(p >= floor)) return {-std::log(floor), true};
  return {-std::log(p), false};
}

Batch make_batch(const std::vector<Window>& windows, const std::vector<std::size_t>& indices) {
  Batch b;
  b.observed = stack_observed(windows, indices);
  b.target = stack_targets(windows, indices);
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) b.labels.push_back(windows.at(i).label.value_or(0));
  return b;
}

namespace {

void complete_grads(const Model& model, GradMap& grads) {
  for (const auto& [path, t] : model.params.trainable) {
    if (!grads.contains(path)) grads.emplace(path, Tensor(t.shape(), 0.0));
  }
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.recst) && std::isfinite(l.pnlty) && std::isfinite(l.cls1) && std::isfinite(l.cls2) &&
         std::isfinite(l.total);
}

}  // namespace

StepResult objective_gradients(const Model& model, const Batch& batch, const TrainConfig& cfg,
                               const StepOptions& options) {
  const std::size_t horizon = batch.target.dim(1);
  Tape tape;
  Forward fw(tape, model, Mode::train);
  fw.update_buffers(options.buffers).dropout_rng(options.dropout);
  const Var observed = tape.constant(batch.observed);
  const Var truth = tape.constant(batch.target);

  StepResult result;
  LossBreakdown& loss = result.loss;
  Var objective;
  if (model.kind == ModelKind::nat) {
    const NatOutputs out = nat_forward(fw, observed, horizon);
    const Var recst = ops::l1_quat_loss(out.predictions, truth);
    const Var pnlty = ops::quat_norm_penalty(out.predictions);
    const Var cls1 = ops::cross_entropy(out.logits, batch.labels);
    objective = ops::add(recst, ops::scale(pnlty, cfg.lambda_pnlty));
    loss.recst = recst.value().item();
    loss.pnlty = pnlty.value().item();
    loss.cls1 = cls1.value().item();
    if (cfg.lambda_cls > 0.0) {
      // Cycle pass: same encoder and classifier on the predicted frames. Its
      // batch statistics are not folded into the running averages.
      Forward cycle(tape, model, Mode::train);
      cycle.dropout_rng(options.dropout);
      const Var cls2 = ops::cross_entropy(arc_logits(cycle, encode_context(cycle, out.predictions)), batch.labels);
      loss.cls2 = cls2.value().item();
      const Var cls = options.cycle_gradient ? ops::add(cls1, cls2) : cls1;
      objective = ops::add(objective, ops::scale(cls, cfg.lambda_cls));
    } else {
      objective = ops::add(objective, ops::scale(cls1, 0.0));
    }
  } else {
    Var context;
    if (options.context) {
      context = tape.constant(*options.context);
    } else if (cfg.freeze_encoder) {
      Forward frozen(tape, model, Mode::eval);
      frozen.freeze_parameters();
      context = encode_context(frozen, observed);
    } else {
      context = encode_context(fw, observed);
    }
    const Var seed = ops::select_frame(observed, observed.dim(1) - 1);
    const Var pred = cfg.teacher_forcing ? ar_teacher_forced(fw, context, seed, truth)
                                         : ar_rollout(fw, context, seed, horizon);
    const Var recst = ops::l1_quat_loss(pred, truth);
    const Var pnlty = ops::quat_norm_penalty(pred);
    objective = ops::add(recst, ops::scale(pnlty, cfg.lambda_pnlty));
    loss.recst = recst.value().item();
    loss.pnlty = pnlty.value().item();
  }
  loss.total = combine_losses(loss, cfg.lambda_pnlty, cfg.lambda_cls);
  if (!finite(loss) || !std::isfinite(objective.value().item())) {
    throw NumericError("non-finite loss: recst=" + std::to_string(loss.recst) + " pnlty=" +
                       std::to_string(loss.pnlty) + " cls1=" + std::to_string(loss.cls1) +
                       " cls2=" + std::to_string(loss.cls2));
  }
  result.grads = tape.backward(objective, Tape::Retain::release);
  complete_grads(model, result.grads);
  return result;
}

Tensor encode_windows(const Model& model, const std::vector<Window>& windows, std::size_t chunk) {
  Tensor out({windows.size(), kContextWidth});
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    indices.resize(std::min(chunk, windows.size() - start));
    std::iota(indices.begin(), indices.end(), start);
    Tape tape;
    Forward fw(tape, model, Mode::eval);
    fw.freeze_parameters();
    const Var c = encode_context(fw, tape.constant(stack_observed(windows, indices)));
    std::copy_n(c.value().ptr(), c.value().size(), out.ptr() + start * kContextWidth);
  }
  return out;
}

TrainResult train(Model model, const std::vector<Window>& windows, const TrainConfig& cfg,
                  const IterationCallback& on_iteration) {
  cfg.validate();
  if (windows.empty()) throw DataError("no training windows: sequences are shorter than N + M");
  if (model.kind == ModelKind::nat && cfg.lambda_cls > 0.0) {
    for (const auto& w : windows) {
      if (!w.label) throw DataError("classification loss needs labeled windows");
      if (*w.label >= model.config.classes()) throw DataError("window label exceeds the model's class count");
    }
  }

  TrainResult result;
  result.optimizer.base_lr = cfg.lr;
  result.optimizer.decay_per_epoch = cfg.decay;

  const std::size_t batch = std::min(cfg.batch, windows.size());
  const std::size_t per_epoch = windows.size() / batch;
  Rng sampler(cfg.seed);
  Rng dropout(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(windows.size());

  Tensor contexts;
  if (model.kind == ModelKind::ar && cfg.freeze_encoder) contexts = encode_windows(model, windows);

  std::vector<std::size_t> indices(batch);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const std::size_t slot = it % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[sampler.index(i)]);
    }
    result.optimizer.epoch = static_cast<std::int64_t>(it / per_epoch);
    std::copy_n(order.begin() + static_cast<std::ptrdiff_t>(slot * batch), batch, indices.begin());
    const Batch b = make_batch(windows, indices);

    Tensor batch_context;
    StepOptions options;
    options.buffers = &model.params;
    options.dropout = &dropout;
    if (!contexts.empty()) {
      batch_context = Tensor({batch, kContextWidth});
      for (std::size_t i = 0; i < batch; ++i) {
        std::copy_n(contexts.ptr() + indices[i] * kContextWidth, kContextWidth,
                    batch_context.ptr() + i * kContextWidth);
      }
      options.context = &batch_context;
    }

    StepResult step;
    try {
      step = objective_gradients(model, b, cfg, options);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
    }
    IterationLog row;
    row.iteration = it;
    row.loss = step.loss;
    row.lr = result.optimizer.learning_rate();
    row.grad_norm = clip_grad_norm(step.grads, cfg.clip);
    if (!std::isfinite(row.grad_norm)) {
      throw NumericError("iteration " + std::to_string(it) + ": non-finite gradient norm");
    }
    adam_step(model.params.trainable, step.grads, result.optimizer);
    if (on_iteration) on_iteration(row);
    result.log.push_back(row);
  }
  result.model = std::move(model);
  return result;
}

std::string loss_csv_header() { return "iteration,recst,pnlty,cls1,cls2,total,lr,grad_norm\n"; }

std::string loss_csv_row(const IterationLog& row) {
  char line[512];
  std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.iteration, row.loss.recst,
                row.loss.pnlty, row.loss.cls1, row.loss.cls2, row.loss.total, row.lr, row.grad_norm);
  return line;
}

}  // namespace natmotion
