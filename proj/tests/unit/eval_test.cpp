#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "json.hpp"
#include "natmotion/checkpoint.hpp"
#include "natmotion/error.hpp"
#include "natmotion/eval.hpp"
#include "natmotion/training.hpp"

namespace natmotion {
namespace {

using testing::random_tensor;

Tensor random_poses(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t q = 0; q < t.size() / 4; ++q) {
    const Quaternion r = quat_from_expmap({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    std::copy_n(&r.w, 1, t.ptr() + q * 4);
    t[q * 4 + 1] = r.x;
    t[q * 4 + 2] = r.y;
    t[q * 4 + 3] = r.z;
  }
  return t;
}

TEST(HorizonFrame, ExactIntegerMapping) {
  const std::vector<std::size_t> expected{2, 4, 8, 10, 14, 25};
  for (std::size_t i = 0; i < kDefaultHorizonsMs.size(); ++i) {
    EXPECT_EQ(horizon_frame(kDefaultHorizonsMs[i], 25.0), expected[i]);
  }
  EXPECT_EQ(horizon_frame(80, 50.0), 4u);
  EXPECT_THROW(horizon_frame(100, 25.0), DataError);  // 2.5 frames
  EXPECT_THROW(horizon_frame(80, 30.0), DataError);   // 2.4 frames
  EXPECT_THROW(horizon_frame(0, 25.0), DataError);
  EXPECT_THROW(horizon_frame(-80, 25.0), DataError);
}

TEST(MeanJointError, ZeroForPerfectPrediction) {
  Rng rng(1);
  const Tensor y = random_poses({25, 4, 4}, rng);
  for (const auto& [ms, e] : mean_joint_error(y, y, kDefaultHorizonsMs, 25.0, EulerOrder::zyx)) EXPECT_EQ(e, 0.0) << ms;
}

TEST(MeanJointError, SingleYawErrorOfOneTenth) {
  Rng rng(2);
  Tensor truth({4, 3, 4}, 0.0);
  for (std::size_t q = 0; q < 12; ++q) truth[q * 4] = 1.0;
  Tensor pred = truth;
  // Joint 1 at frame 2: a yaw (first zyx angle) of 0.1 rad.
  const Quaternion yaw{std::cos(0.05), 0.0, 0.0, std::sin(0.05)};
  double* p = pred.ptr() + (1 * 3 + 1) * 4;
  p[0] = yaw.w;
  p[3] = yaw.z;
  const auto err = mean_joint_error(pred, truth, {80}, 25.0, EulerOrder::zyx);
  EXPECT_NEAR(err.at(80), 0.1, 1e-12);
  const auto frames = frame_errors(pred, truth, EulerOrder::zyx);
  EXPECT_EQ(frames[0], 0.0);
  EXPECT_EQ(frames[2], 0.0);
}

TEST(MeanJointError, AveragesOverWindows) {
  Rng rng(3);
  const Tensor a = random_poses({2, 3, 2, 4}, rng), b = random_poses({2, 3, 2, 4}, rng);
  const auto batched = frame_errors(a, b, EulerOrder::xyz);
  for (std::size_t t = 0; t < 3; ++t) {
    double sum = 0.0;
    for (std::size_t w = 0; w < 2; ++w) {
      const Tensor aw(Shape{3, 2, 4}, std::vector<double>(a.ptr() + w * 24, a.ptr() + (w + 1) * 24));
      const Tensor bw(Shape{3, 2, 4}, std::vector<double>(b.ptr() + w * 24, b.ptr() + (w + 1) * 24));
      sum += frame_errors(aw, bw, EulerOrder::xyz)[t];
    }
    EXPECT_NEAR(batched[t], sum / 2.0, 1e-15);
  }
}

TEST(MeanJointError, SignFlipInvariant) {
  Rng rng(4);
  const Tensor a = random_poses({10, 5, 4}, rng), b = random_poses({10, 5, 4}, rng);
  Tensor flipped = a;
  for (std::size_t q = 0; q < 50; q += 3) {
    for (std::size_t k = 0; k < 4; ++k) flipped[q * 4 + k] = -flipped[q * 4 + k];
  }
  const auto e1 = mean_joint_error(a, b, {80, 160, 320, 400}, 25.0, EulerOrder::zyx);
  const auto e2 = mean_joint_error(flipped, b, {80, 160, 320, 400}, 25.0, EulerOrder::zyx);
  for (const auto& [ms, e] : e1) EXPECT_NEAR(e2.at(ms), e, 1e-12);
}

TEST(MeanJointError, HorizonBeyondPredictionRejected) {
  const Tensor y({10, 2, 4}, 0.5);
  EXPECT_THROW(mean_joint_error(y, y, {560}, 25.0, EulerOrder::zyx), DataError);
  EXPECT_THROW(mean_joint_error(y, Tensor({9, 2, 4}, 0.5), {80}, 25.0, EulerOrder::zyx), ShapeError);
}

TEST(ZeroVelocity, RepeatsLastFrame) {
  Rng rng(5);
  const Tensor x = random_poses({2, 6, 3, 4}, rng);
  const Tensor y = zero_velocity_predict(x, 4);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 3, 4}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(y[(b * 4 + t) * 12 + k], x[(b * 6 + 5) * 12 + k]);
    }
  }
  // A constant ground truth is predicted exactly.
  const Tensor still = zero_velocity_predict(Tensor::of({1, 2, 4}, {1, 0, 0, 0, 0.6, 0.8, 0, 0}), 25);
  for (const auto& [ms, e] : mean_joint_error(still, still, kDefaultHorizonsMs, 25.0, EulerOrder::zyx)) EXPECT_EQ(e, 0.0);
}

TEST(ZeroVelocity, EqualsNatWithZeroedResidual) {
  ModelConfig cfg;
  cfg.tree = KinematicTree::binary(5);
  cfg.given_frames = 10;
  Model m = make_model(ModelKind::nat, cfg, 6);
  for (const char* path : {"decoder.block5.tcn.weight", "decoder.block5.tcn.bias", "decoder.block5.shortcut.weight"}) {
    m.params.trainable.at(path).fill(0.0);
  }
  Rng rng(6);
  const Tensor x = random_poses({3, 10, 5, 4}, rng);
  EXPECT_EQ(predict(m, x, 25).frames, zero_velocity_predict(x, 25));
}

TEST(ZeroVelocity, ErrorGrowsWithHorizonOnSyntheticData) {
  SyntheticSpec spec;
  spec.seqs_per_class = 5;
  const auto seqs = generate_synthetic(spec);
  const auto windows = make_windows(seqs, {50, 25, 10});
  std::vector<std::size_t> all(windows.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor pred = zero_velocity_predict(stack_observed(windows, all), 25);
  const auto e = mean_joint_error(pred, stack_targets(windows, all), kDefaultHorizonsMs, 25.0, EulerOrder::zyx);
  EXPECT_GE(e.at(1000), e.at(80));
  EXPECT_GT(e.at(80), 0.0);
}

TEST(Argmax, TiesGoToLowestIndex) {
  const std::vector<double> tie{0.2, 0.4, 0.4};
  EXPECT_EQ(argmax(tie), 1u);
  const std::vector<double> uniform(5, 0.2);
  EXPECT_EQ(argmax(uniform), 0u);
  const std::vector<double> last{0.1, 0.2, 0.7};
  EXPECT_EQ(argmax(last), 2u);
}

struct EvalFixture {
  Dataset data;
  std::vector<Window> windows;
  Model model;

  EvalFixture() {
    SyntheticSpec spec;
    spec.joints = 5;
    spec.seqs_per_class = 3;
    spec.frames = 40;
    spec.seed = 8;
    data.sequences = generate_synthetic(spec);
    data.class_names = {"class0", "class1", "class2"};
    // Skew the class balance so class-0 frequency is not 1/3.
    data.sequences.erase(data.sequences.begin() + 7, data.sequences.end());
    ModelConfig cfg;
    cfg.tree = data.sequences.front().tree;
    cfg.given_frames = 10;
    model = make_model(ModelKind::nat, cfg, 4);
    windows = make_windows(data.sequences, {10, 4, 6});
  }
};

TEST(Accuracy, UniformArcPredictsClassZero) {
  EvalFixture f;
  for (auto& [path, t] : f.model.params.trainable) {
    if (path.starts_with("arc.")) t.fill(0.0);
  }
  const Accuracy acc = recognition_accuracy(f.model, f.windows);
  const double zeros = static_cast<double>(std::count_if(f.windows.begin(), f.windows.end(),
                                                         [](const Window& w) { return w.label == 0u; }));
  EXPECT_EQ(acc.o1, zeros / static_cast<double>(f.windows.size()));
  EXPECT_EQ(acc.o2, acc.o1);
}

TEST(Accuracy, InvariantToShuffling) {
  EvalFixture f;
  const Accuracy a = recognition_accuracy(f.model, f.windows, 5);
  auto shuffled = f.windows;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
  const Accuracy b = recognition_accuracy(f.model, shuffled, 7);
  EXPECT_EQ(a.o1, b.o1);
  EXPECT_EQ(a.o2, b.o2);
  EXPECT_GE(a.o1, 0.0);
  EXPECT_LE(a.o1, 1.0);
}

TEST(Accuracy, UnlabeledWindowsRejected) {
  EvalFixture f;
  f.windows[2].label.reset();
  EXPECT_THROW(recognition_accuracy(f.model, f.windows), DataError);
}

TEST(ErrorAccumulation, ZeroDeltaGivesZeroCurves) {
  EvalFixture f;
  const Model ar = make_model(ModelKind::ar, f.model.config, 5);
  const AccumulationCurves c = error_accumulation_experiment(f.model, ar, f.windows, 0.0, 4);
  ASSERT_EQ(c.nat.size(), 4u);
  ASSERT_EQ(c.ar.size(), 4u);
  for (double v : c.nat) EXPECT_EQ(v, 0.0);
  for (double v : c.ar) EXPECT_EQ(v, 0.0);
}

TEST(ErrorAccumulation, NatOnlyFirstFrameMoves) {
  EvalFixture f;
  const Model ar = make_model(ModelKind::ar, f.model.config, 5);
  const AccumulationCurves c = error_accumulation_experiment(f.model, ar, f.windows, 0.05, 4, 3);
  EXPECT_NEAR(c.nat[0], 4 * 0.05, 1e-12);  // L1 over the 4 components
  for (std::size_t t = 1; t < 4; ++t) EXPECT_EQ(c.nat[t], 0.0);
  EXPECT_NEAR(c.ar[0], 4 * 0.05, 1e-12);
  for (std::size_t t = 1; t < 4; ++t) EXPECT_GT(c.ar[t], 0.0);
  const std::string csv = accumulation_csv(c);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "frame,nat_deviation,ar_deviation");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Evaluate, ReportIsDeterministicAndComplete) {
  EvalFixture f;
  EvalConfig cfg;
  cfg.horizons_ms = {80, 160};
  const EvalReport a = evaluate(f.model, f.data, cfg);
  const EvalReport b = evaluate(f.model, f.data, cfg);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.horizon, 4u);
  EXPECT_EQ(a.given, 10u);
  EXPECT_EQ(a.checkpoint_hash, checkpoint_digest(f.model));
  ASSERT_TRUE(a.accuracy.has_value());
  EXPECT_EQ(a.per_action.size(), 3u);

  const auto doc = nlohmann::json::parse(a.to_json());
  EXPECT_EQ(doc["metadata"]["euler_order"], "zyx");
  EXPECT_EQ(doc["metadata"]["averaging"], "per-window");
  EXPECT_TRUE(doc["mean_joint_error"].contains("80"));
  EXPECT_TRUE(doc["zero_velocity_error"].contains("160"));
}

TEST(Evaluate, MismatchedDataRejected) {
  EvalFixture f;
  EvalConfig cfg;
  Dataset other = f.data;
  for (auto& s : other.sequences) s.fps = 50.0;
  EXPECT_THROW(evaluate(f.model, other, cfg), DataError);
  other = f.data;
  other.sequences.front().action = "unknown";
  EXPECT_THROW(evaluate(f.model, other, cfg), DataError);
  cfg.horizons_ms = {100};
  EXPECT_THROW(evaluate(f.model, f.data, cfg), DataError);
}

}  // namespace
}  // namespace natmotion
