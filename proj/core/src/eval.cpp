#include "natmotion/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "natmotion/checkpoint.hpp"
#include "natmotion/error.hpp"
#include "natmotion/ops.hpp"

namespace natmotion {

std::size_t horizon_frame(int ms, double fps) {
  if (ms <= 0) throw DataError("horizons must be positive, got " + std::to_string(ms) + " ms");
  const double product = static_cast<double>(ms) * fps;
  if (!std::isfinite(product) || product != std::floor(product)) {
    throw DataError(std::to_string(ms) + " ms at " + std::to_string(fps) + " fps is not a whole frame");
  }
  const auto scaled = static_cast<long long>(product);
  if (scaled % 1000 != 0) {
    throw DataError(std::to_string(ms) + " ms at " + std::to_string(fps) + " fps is not a whole frame");
  }
  return static_cast<std::size_t>(scaled / 1000);
}

namespace {

double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0.0) a += two_pi;
  return a - std::numbers::pi;
}

Tensor batched(const Tensor& t) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  throw ShapeError("expected [M, J, 4] or [B, M, J, 4], got " + to_string(t.shape()));
}

}  // namespace

std::vector<double> frame_errors(const Tensor& pred_in, const Tensor& truth_in, EulerOrder order) {
  if (pred_in.shape() != truth_in.shape()) {
    throw ShapeError("frame_errors: " + to_string(pred_in.shape()) + " vs " + to_string(truth_in.shape()));
  }
  const Tensor pred = batched(pred_in), truth = batched(truth_in);
  if (pred.dim(3) != 4) throw ShapeError("frame_errors: expected quaternions in the last axis");
  const std::size_t batch = pred.dim(0), frames = pred.dim(1), joints = pred.dim(2);
  std::vector<double> out(frames, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < frames; ++t) {
      double sq = 0.0;
      for (std::size_t j = 0; j < joints; ++j) {
        const double* p = pred.ptr() + ((b * frames + t) * joints + j) * 4;
        const double* q = truth.ptr() + ((b * frames + t) * joints + j) * 4;
        const Vec3 ep = quat_to_euler({p[0], p[1], p[2], p[3]}, order);
        const Vec3 eq = quat_to_euler({q[0], q[1], q[2], q[3]}, order);
        for (std::size_t k = 0; k < 3; ++k) {
          const double d = wrap_angle(ep[k] - eq[k]);
          sq += d * d;
        }
      }
      out[t] += std::sqrt(sq);
    }
  }
  for (double& e : out) e /= static_cast<double>(batch);
  return out;
}

std::map<int, double> mean_joint_error(const Tensor& pred, const Tensor& truth, const std::vector<int>& horizons_ms,
                                       double fps, EulerOrder order) {
  const std::vector<double> per_frame = frame_errors(pred, truth, order);
  std::map<int, double> out;
  for (int ms : horizons_ms) {
    const std::size_t frame = horizon_frame(ms, fps);
    if (frame > per_frame.size()) {
      throw DataError(std::to_string(ms) + " ms is frame " + std::to_string(frame) + ", beyond the " +
                      std::to_string(per_frame.size()) + " predicted frames");
    }
    out[ms] = per_frame[frame - 1];
  }
  return out;
}

Tensor zero_velocity_predict(const Tensor& observed, std::size_t horizon) {
  if (horizon == 0) throw std::invalid_argument("zero_velocity_predict: horizon must be >= 1");
  const bool unbatched = observed.rank() == 3;
  const Tensor x = unbatched ? observed.reshaped({1, observed.dim(0), observed.dim(1), observed.dim(2)}) : observed;
  if (x.rank() != 4 || x.dim(1) == 0) throw ShapeError("zero_velocity_predict: expected [B, N, J, 4]");
  const Tensor seed = last_frame(x);
  const std::size_t batch = x.dim(0), inner = seed.size() / batch;
  Tensor out({batch, horizon, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < horizon; ++t) {
      std::copy_n(seed.ptr() + b * inner, inner, out.ptr() + (b * horizon + t) * inner);
    }
  }
  return unbatched ? std::move(out).reshaped({horizon, x.dim(2), x.dim(3)}) : out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

template <typename F>
void for_chunks(std::size_t count, std::size_t chunk, F&& f) {
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < count; start += chunk) {
    indices.resize(std::min(chunk, count - start));
    std::iota(indices.begin(), indices.end(), start);
    f(indices);
  }
}

std::size_t count_hits(const Tensor& probs, const std::vector<Window>& windows, const std::vector<std::size_t>& idx) {
  std::size_t hits = 0;
  const std::size_t classes = probs.dim(1);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (argmax(std::span<const double>(probs.ptr() + b * classes, classes)) == *windows[idx[b]].label) ++hits;
  }
  return hits;
}

}  // namespace

Accuracy recognition_accuracy(const Model& model, const std::vector<Window>& windows, std::size_t chunk) {
  if (model.kind != ModelKind::nat) throw std::invalid_argument("recognition accuracy needs a NAT model");
  if (windows.empty()) throw DataError("no windows to classify");
  for (const auto& w : windows) {
    if (!w.label) throw DataError("recognition accuracy needs labeled windows");
  }
  const std::size_t horizon = windows.front().target.dim(0);
  std::size_t hits1 = 0, hits2 = 0;
  for_chunks(windows.size(), chunk, [&](const std::vector<std::size_t>& idx) {
    const Prediction p = predict(model, stack_observed(windows, idx), horizon);
    hits1 += count_hits(p.probabilities, windows, idx);
    Tape tape;
    Forward fw(tape, model, Mode::eval);
    fw.freeze_parameters();
    const Var cycle = ops::softmax(arc_logits(fw, encode_context(fw, tape.constant(p.frames))));
    hits2 += count_hits(cycle.value(), windows, idx);
  });
  const auto n = static_cast<double>(windows.size());
  return {static_cast<double>(hits1) / n, static_cast<double>(hits2) / n};
}

std::string EvalReport::to_json() const {
  using nlohmann::ordered_json;
  auto horizon_map = [](const std::map<int, double>& m) {
    ordered_json out = ordered_json::object();
    for (const auto& [ms, e] : m) out[std::to_string(ms)] = e;
    return out;
  };
  ordered_json actions = ordered_json::object();
  for (const auto& [name, m] : per_action) actions[name] = horizon_map(m);
  ordered_json doc;
  doc["model"] = model_kind;
  doc["horizons_ms"] = horizons_ms;
  doc["mean_joint_error"] = horizon_map(error);
  doc["zero_velocity_error"] = horizon_map(zero_velocity_error);
  doc["per_action"] = actions;
  if (accuracy) {
    doc["accuracy"] = {{"o1", accuracy->o1}, {"o2", accuracy->o2}};
  } else {
    doc["accuracy"] = nullptr;
  }
  doc["windows"] = windows;
  doc["metadata"] = {{"euler_order", euler_order},
                     {"fps", fps},
                     {"given_frames", given},
                     {"predicted_frames", horizon},
                     {"window_stride", stride},
                     {"averaging", "per-window"},
                     {"angle_difference", "wrapped to [-pi, pi)"},
                     {"argmax_ties", "lowest class index"},
                     {"checkpoint_fnv1a64", checkpoint_hash}};
  return doc.dump(2) + "\n";
}

EvalReport evaluate(const Model& model, const Dataset& data, const EvalConfig& cfg) {
  if (cfg.horizons_ms.empty()) throw DataError("no evaluation horizons given");
  if (data.sequences.empty()) throw DataError("evaluation dataset is empty");
  const double fps = model.config.fps;
  std::size_t max_frame = 0;
  for (int ms : cfg.horizons_ms) max_frame = std::max(max_frame, horizon_frame(ms, fps));

  std::vector<MotionSequence> seqs = data.sequences;
  for (const auto& s : seqs) {
    if (s.fps != fps) throw DataError("dataset fps differs from the checkpoint's " + std::to_string(fps));
    if (s.tree.parents() != model.config.tree.parents()) throw DataError("dataset skeleton differs from the checkpoint");
  }
  assign_labels(seqs, model.config.class_names);
  const std::vector<Window> windows = make_windows(seqs, {model.config.given_frames, max_frame, cfg.stride});
  if (windows.empty()) throw DataError("no sequence is long enough for N + M frames");

  EvalReport report;
  report.model_kind = to_string(model.kind);
  report.horizons_ms = cfg.horizons_ms;
  report.windows = windows.size();
  report.euler_order = to_string(cfg.order);
  report.fps = fps;
  report.given = model.config.given_frames;
  report.horizon = max_frame;
  report.stride = cfg.stride;
  report.checkpoint_hash = checkpoint_digest(model);

  // Per-window frame errors, reduced in window order.
  std::vector<std::vector<double>> model_err(windows.size()), zv_err(windows.size());
  for_chunks(windows.size(), cfg.chunk, [&](const std::vector<std::size_t>& idx) {
    const Tensor observed = stack_observed(windows, idx);
    const Tensor truth = stack_targets(windows, idx);
    const Tensor pred = predict(model, observed, max_frame).frames;
    const Tensor zv = zero_velocity_predict(observed, max_frame);
    const std::size_t inner = truth.size() / idx.size();
    const Shape one{max_frame, truth.dim(2), 4};
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto slice = [&](const Tensor& t) {
        return Tensor(one, std::vector<double>(t.ptr() + b * inner, t.ptr() + (b + 1) * inner));
      };
      const Tensor y = slice(truth);
      model_err[idx[b]] = frame_errors(slice(pred), y, cfg.order);
      zv_err[idx[b]] = frame_errors(slice(zv), y, cfg.order);
    }
  });

  auto average = [&](const std::vector<std::vector<double>>& errs, const std::vector<std::size_t>& members) {
    std::map<int, double> out;
    for (int ms : cfg.horizons_ms) {
      const std::size_t frame = horizon_frame(ms, fps);
      double total = 0.0;
      for (std::size_t w : members) total += errs[w][frame - 1];
      out[ms] = total / static_cast<double>(members.size());
    }
    return out;
  };
  std::vector<std::size_t> all(windows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  report.error = average(model_err, all);
  report.zero_velocity_error = average(zv_err, all);
  for (std::size_t c = 0; c < model.config.classes(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (windows[w].label == c) members.push_back(w);
    }
    if (!members.empty()) report.per_action[model.config.class_names[c]] = average(model_err, members);
  }
  if (model.kind == ModelKind::nat) report.accuracy = recognition_accuracy(model, windows, cfg.chunk);
  return report;
}

AccumulationCurves error_accumulation_experiment(const Model& nat, const Model& ar, const std::vector<Window>& windows,
                                                 double delta, std::size_t horizon, std::size_t chunk) {
  if (nat.kind != ModelKind::nat || ar.kind != ModelKind::ar) {
    throw std::invalid_argument("error accumulation needs a NAT and an AR model");
  }
  if (windows.empty()) throw DataError("no windows for the error-accumulation experiment");
  if (horizon == 0) throw std::invalid_argument("horizon must be >= 1");
  AccumulationCurves curves{std::vector<double>(horizon, 0.0), std::vector<double>(horizon, 0.0)};
  const std::size_t joints = windows.front().observed.dim(1);

  auto accumulate = [&](const Model& model, std::vector<double>& curve, const std::vector<std::size_t>& idx,
                        const Tensor& observed) {
    Tensor offset({idx.size(), horizon, joints, 4}, 0.0);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::fill_n(offset.ptr() + b * horizon * joints * 4, joints * 4, delta);
    }
    const Tensor base = predict(model, observed, horizon).frames;
    const Tensor moved = predict(model, observed, horizon, &offset).frames;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t t = 0; t < horizon; ++t) {
        const std::size_t at = (b * horizon + t) * joints * 4;
        double l1 = 0.0;
        for (std::size_t k = 0; k < joints * 4; ++k) l1 += std::abs(moved[at + k] - base[at + k]);
        curve[t] += l1 / static_cast<double>(joints);
      }
    }
  };
  for_chunks(windows.size(), chunk, [&](const std::vector<std::size_t>& idx) {
    const Tensor observed = stack_observed(windows, idx);
    accumulate(nat, curves.nat, idx, observed);
    accumulate(ar, curves.ar, idx, observed);
  });
  for (auto* curve : {&curves.nat, &curves.ar}) {
    for (double& v : *curve) v /= static_cast<double>(windows.size());
  }
  return curves;
}

std::string accumulation_csv(const AccumulationCurves& curves) {
  std::string out = "frame,nat_deviation,ar_deviation\n";
  char line[128];
  for (std::size_t t = 0; t < curves.nat.size(); ++t) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", t + 1, curves.nat[t], curves.ar[t]);
    out += line;
  }
  return out;
}

}  // namespace natmotion
