#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "natmotion/data.hpp"
#include "natmotion/model.hpp"

namespace natmotion {

inline const std::vector<int> kDefaultHorizonsMs{80, 160, 320, 400, 560, 1000};

/// 1-based frame index of a horizon: ms / 1000 * fps. Throws DataError unless
/// that is a positive integer.
std::size_t horizon_frame(int ms, double fps);

/// Per-frame pose error in Euler-angle space, averaged over windows:
/// out[t] = mean_b || euler(pred[b,t]) - euler(truth[b,t]) ||_2 over all 3J
/// angles. Angle differences are wrapped into [-pi, pi). Accepts [M, J, 4] or
/// [B, M, J, 4].
std::vector<double> frame_errors(const Tensor& pred, const Tensor& truth, EulerOrder order);

/// frame_errors sampled at each horizon's frame. Throws DataError when a
/// horizon lies beyond the predicted frames.
std::map<int, double> mean_joint_error(const Tensor& pred, const Tensor& truth, const std::vector<int>& horizons_ms,
                                       double fps, EulerOrder order);

/// Repeats the last observed frame: [B, N, J, 4] -> [B, M, J, 4] (or unbatched).
Tensor zero_velocity_predict(const Tensor& observed, std::size_t horizon);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

struct Accuracy {
  double o1 = 0.0;  // classifier on the observed frames
  double o2 = 0.0;  // classifier on the re-encoded predictions
};

/// Eval-mode recognition accuracy of a NAT model over labeled windows.
/// Throws DataError on unlabeled windows.
Accuracy recognition_accuracy(const Model& model, const std::vector<Window>& windows, std::size_t chunk = 32);

struct EvalConfig {
  std::vector<int> horizons_ms = kDefaultHorizonsMs;
  EulerOrder order = EulerOrder::zyx;
  std::size_t stride = 5;
  std::size_t chunk = 32;
};

struct EvalReport {
  std::string model_kind;
  std::vector<int> horizons_ms;
  std::map<int, double> error;                // model
  std::map<int, double> zero_velocity_error;  // baseline on the same windows
  std::map<std::string, std::map<int, double>> per_action;
  std::optional<Accuracy> accuracy;  // NAT models only
  std::size_t windows = 0;
  std::string euler_order;
  double fps = 0.0;
  std::size_t given = 0;
  std::size_t horizon = 0;
  std::size_t stride = 0;
  std::string checkpoint_hash;

  std::string to_json() const;
};

/// Windows every sequence with N from the checkpoint and M = the largest
/// horizon's frame, then reports errors and accuracies with equal weight per
/// window.
EvalReport evaluate(const Model& model, const Dataset& data, const EvalConfig& cfg);

struct AccumulationCurves {
  std::vector<double> nat;  // index t-1 holds frame t
  std::vector<double> ar;
};

/// Adds `delta` to every component of the first generated frame's residual
/// and reports, per frame, the mean over windows and joints of the L1
/// distance between perturbed and unperturbed predictions.
AccumulationCurves error_accumulation_experiment(const Model& nat, const Model& ar, const std::vector<Window>& windows,
                                                 double delta, std::size_t horizon, std::size_t chunk = 32);
std::string accumulation_csv(const AccumulationCurves& curves);

}  // namespace natmotion
