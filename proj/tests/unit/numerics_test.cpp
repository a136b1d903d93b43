#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "natmotion/error.hpp"
#include "natmotion/gemm.hpp"
#include "natmotion/ops.hpp"
#include "natmotion/optim.hpp"

namespace natmotion {
namespace {

using testing::random_tensor;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t({2, 3}, std::vector<double>(6, 1.5));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at(1, 2), 1.5);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Backward, IdentitySeedIsOne) {
  Tape tape;
  const Var x = tape.leaf("x", Tensor::scalar(3.0));
  const GradMap g = tape.backward(x);
  EXPECT_EQ(g.at("x").item(), 1.0);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  const Var x = tape.leaf("x", Tensor::of({3}, {1, 2, 3}));
  const GradMap g = tape.backward(ops::sum(ops::mul(x, x)));
  EXPECT_EQ(g.at("x").values(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, RejectsNonScalarAndForeignLoss) {
  Tape tape, other;
  const Var x = tape.leaf("x", Tensor::of({2}, {1, 2}));
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
  const Var y = other.leaf("y", Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Backward, EveryLeafGetsExactlyOneGradient) {
  Tape tape;
  const Var used = tape.leaf("used", Tensor::of({2}, {1, -1}));
  const Var unused = tape.leaf("unused", Tensor::of({3}, {5, 5, 5}));
  const Var frozen = tape.constant(Tensor::of({2}, {2, 2}));
  const GradMap g = tape.backward(ops::sum(ops::mul(used, frozen)));
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g.at("used").values(), (std::vector<double>{2, 2}));
  EXPECT_EQ(g.at("unused").values(), (std::vector<double>{0, 0, 0}));
  (void)unused;
}

TEST(Backward, BitwiseDeterministic) {
  auto run = [] {
    Rng rng(4);
    Tape tape;
    const Var a = tape.leaf("a", random_tensor({7, 9}, rng));
    const Var b = tape.leaf("b", random_tensor({9, 5}, rng));
    return tape.backward(testing::project(ops::leaky_relu(ops::matmul(a, b), 0.01)));
  };
  const GradMap g1 = run(), g2 = run();
  EXPECT_EQ(g1.at("a"), g2.at("a"));
  EXPECT_EQ(g1.at("b"), g2.at("b"));
}

TEST(Backward, ReleasedTapeIsConsumed) {
  Tape tape;
  const Var x = tape.leaf("x", Tensor::scalar(2.0));
  const Var y = ops::mul(x, x);
  tape.backward(y, Tape::Retain::release);
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

void naive_gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                const std::vector<double>& b, std::vector<double>& c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::no ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::no ? b[p * n + j] : b[j * k + p];
        acc += static_cast<long double>(av) * bv;
      }
      c[i * n + j] = static_cast<double>(acc);
    }
  }
}

TEST(Gemm, MatchesNaiveProductForAllLayouts) {
  Rng rng(9);
  for (auto [m, n, k] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {7, 17, 3}, {13, 33, 300}, {97, 5, 260}}) {
    for (Trans ta : {Trans::no, Trans::yes}) {
      for (Trans tb : {Trans::no, Trans::yes}) {
        std::vector<double> a(m * k), b(k * n), c(m * n, 0.0), ref(m * n);
        for (double& v : a) v = rng.uniform(-1, 1);
        for (double& v : b) v = rng.uniform(-1, 1);
        gemm(ta, tb, m, n, k, a.data(), ta == Trans::no ? k : m, b.data(), tb == Trans::no ? n : k, c.data(), n);
        naive_gemm(ta, tb, m, n, k, a, b, ref);
        for (std::size_t i = 0; i < m * n; ++i) ASSERT_NEAR(c[i], ref[i], 1e-12 * static_cast<double>(k));
      }
    }
  }
}

TEST(Gemm, AccumulateAddsAndEmptyKZeroes) {
  std::vector<double> a{1, 2}, b{3, 4}, c{10};
  gemm(Trans::no, Trans::no, 1, 1, 2, a.data(), 2, b.data(), 1, c.data(), 1, true);
  EXPECT_EQ(c[0], 21.0);
  gemm(Trans::no, Trans::no, 1, 1, 0, a.data(), 2, b.data(), 1, c.data(), 1);
  EXPECT_EQ(c[0], 0.0);
}

TEST(Gemm, ColumnResultsIndependentOfMatrixWidth) {
  Rng rng(10);
  const std::size_t m = 19, k = 700, wide = 45;
  std::vector<double> a(m * k), b(k * wide), c_wide(m * wide), c_one(m);
  for (double& v : a) v = rng.uniform(-1, 1);
  for (double& v : b) v = rng.uniform(-1, 1);
  gemm(Trans::no, Trans::no, m, wide, k, a.data(), k, b.data(), wide, c_wide.data(), wide);
  for (std::size_t j : {0u, 17u, 44u}) {
    gemm(Trans::no, Trans::no, m, 1, k, a.data(), k, b.data() + j, wide, c_one.data(), 1);
    for (std::size_t i = 0; i < m; ++i) ASSERT_EQ(c_one[i], c_wide[i * wide + j]);
  }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  TensorMap params{{"w", Tensor::of({3}, {1, -2, 3})}};
  const TensorMap before = params;
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(params, {{"w", Tensor({3}, 0.0)}}, state);
  EXPECT_EQ(params.at("w"), before.at("w"));
  EXPECT_EQ(state.step, 5);
}

TEST(Adam, FirstStepClosedForm) {
  TensorMap params{{"x", Tensor::scalar(0.0)}};
  AdamState state;
  state.base_lr = 0.001;
  adam_step(params, {{"x", Tensor::scalar(1.0)}}, state);
  // Bias correction makes the first step lr * g / (|g| + eps).
  const double delta = params.at("x").item();
  EXPECT_LT(std::abs(delta + 0.001 * 1.0 / (1.0 + 1e-8)), 1e-9);
}

TEST(Adam, MinimizesScalarQuadratic) {
  TensorMap params{{"x", Tensor::scalar(0.0)}};
  AdamState state;
  state.base_lr = 0.1;
  for (int i = 0; i < 200; ++i) {
    const double x = params.at("x").item();
    adam_step(params, {{"x", Tensor::scalar(2.0 * (x - 3.0))}}, state);
  }
  EXPECT_LT(std::abs(params.at("x").item() - 3.0), 0.05);
}

TEST(Adam, StepCountIncrementsAndMomentsTrackShapes) {
  TensorMap params{{"a", Tensor({2, 2}, 1.0)}, {"b", Tensor({3}, 1.0)}};
  AdamState state;
  for (std::int64_t i = 1; i <= 3; ++i) {
    adam_step(params, {{"a", Tensor({2, 2}, 0.5)}, {"b", Tensor({3}, -0.5)}}, state);
    EXPECT_EQ(state.step, i);
    EXPECT_EQ(state.m.at("a").shape(), params.at("a").shape());
    EXPECT_EQ(state.v.at("b").shape(), params.at("b").shape());
  }
}

TEST(Adam, RejectsBadGradients) {
  TensorMap params{{"w", Tensor({2}, 0.0)}};
  AdamState state;
  EXPECT_THROW(adam_step(params, {{"w", Tensor({3}, 0.0)}}, state), ShapeError);
  EXPECT_THROW(adam_step(params, {{"w", Tensor::of({2}, {1.0, NAN})}}, state), NumericError);
  EXPECT_THROW(adam_step(params, {}, state), std::invalid_argument);
  EXPECT_EQ(state.step, 0);
}

TEST(Adam, LearningRateDecaysPerEpoch) {
  AdamState state;
  state.base_lr = 0.001;
  state.decay_per_epoch = 0.9995;
  const double lr0 = state.learning_rate();
  state.epoch = 1;
  EXPECT_EQ(state.learning_rate(), lr0 * 0.9995);
  state.epoch = 10;
  EXPECT_NEAR(state.learning_rate(), 0.001 * std::pow(0.9995, 10), 1e-18);
}

TEST(Clip, BelowThresholdUnchanged) {
  GradMap g{{"a", Tensor::of({2}, {0.03, 0.04})}};
  EXPECT_NEAR(clip_grad_norm(g, 0.1), 0.05, 1e-15);
  EXPECT_EQ(g.at("a").values(), (std::vector<double>{0.03, 0.04}));
}

TEST(Clip, ScalesToMaxNorm) {
  GradMap g{{"a", Tensor::of({2}, {3, 4})}};
  EXPECT_EQ(clip_grad_norm(g, 0.1), 5.0);
  EXPECT_NEAR(g.at("a")[0], 0.06, 1e-15);
  EXPECT_NEAR(g.at("a")[1], 0.08, 1e-15);
}

TEST(Clip, ResultNormIsMinOfOriginalAndMax) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    GradMap g{{"a", random_tensor({5}, rng, -0.1, 0.1)}, {"b", random_tensor({2, 3}, rng, -0.1, 0.1)}};
    const double max_norm = rng.uniform(0.01, 0.3);
    const double before = clip_grad_norm(g, max_norm);
    EXPECT_NEAR(global_norm(g), std::min(before, max_norm), 1e-12);
  }
}

TEST(Clip, EmptyAndInvalid) {
  GradMap empty;
  EXPECT_EQ(clip_grad_norm(empty, 0.1), 0.0);
  EXPECT_THROW(clip_grad_norm(empty, 0.0), std::invalid_argument);
}

TEST(Rng, SeededStreamsRepeat) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    ASSERT_EQ(a.uniform(), b.uniform());
    ASSERT_EQ(a.normal(), b.normal());
    ASSERT_EQ(a.index(7), b.index(7));
  }
}

}  // namespace
}  // namespace natmotion
