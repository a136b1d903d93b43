#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>

#include "natmotion/error.hpp"
#include "natmotion/rng.hpp"
#include "natmotion/skeleton.hpp"

namespace natmotion {
namespace {

Quaternion random_unit(Rng& rng) {
  return normalized({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
}

void expect_matrix_near(const Mat3& a, const Mat3& b, double tol) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(a[i][j], b[i][j], tol) << i << "," << j;
  }
}

// Independent oracle: intrinsic rotations composed as R = R_a1(e0) R_a2(e1) R_a3(e2).
Mat3 axis_rotation(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r{};
  r[axis][axis] = 1.0;
  const int u = (axis + 1) % 3, v = (axis + 2) % 3;
  r[u][u] = c;
  r[u][v] = -s;
  r[v][u] = s;
  r[v][v] = c;
  return r;
}

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 euler_to_matrix(const Vec3& e, EulerOrder order) {
  const std::string name = to_string(order);
  Mat3 r = axis_rotation(name[0] - 'x', e[0]);
  r = multiply(r, axis_rotation(name[1] - 'x', e[1]));
  return multiply(r, axis_rotation(name[2] - 'x', e[2]));
}

TEST(KinematicTree, RejectsInvalidParents) {
  EXPECT_THROW(KinematicTree(std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW(KinematicTree({-1, -1}), std::invalid_argument);
  EXPECT_THROW(KinematicTree({-1, 5}), std::invalid_argument);
  EXPECT_THROW(KinematicTree({-1, 2, 1}), std::invalid_argument);
  EXPECT_THROW(KinematicTree({1, 0}), std::invalid_argument);
  EXPECT_EQ(KinematicTree::binary(8).parents(), (std::vector<int>{-1, 0, 0, 1, 1, 2, 2, 3}));
}

/// Number of joint permutations that preserve the bidirectional adjacency.
std::size_t automorphisms(const KinematicTree& tree) {
  const Tensor a = adjacency_matrix(tree, {GraphType::bidirectional});
  const std::size_t n = tree.joints();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t count = 0;
  do {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      for (std::size_t j = 0; j < n && ok; ++j) ok = a.at(i, j) == a.at(perm[i], perm[j]);
    }
    count += ok;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return count;
}

TEST(KinematicTree, BranchedShapeAndNoAutomorphisms) {
  EXPECT_EQ(KinematicTree::branched(8).parents(), (std::vector<int>{-1, 0, 1, 2, 1, 0, 5, 6}));
  EXPECT_EQ(KinematicTree::branched(1).parents(), (std::vector<int>{-1}));
  for (std::size_t n = 1; n <= 12; ++n) {
    const KinematicTree tree = KinematicTree::branched(n);
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_LE(std::count(tree.parents().begin(), tree.parents().end(), static_cast<int>(j)), 2);
    }
  }
  for (std::size_t n = 7; n <= 9; ++n) EXPECT_EQ(automorphisms(KinematicTree::branched(n)), 1u) << n;
  // The heap-ordered tree swaps its two leaves under joint 2.
  EXPECT_EQ(automorphisms(KinematicTree::binary(8)), 2u);
}

TEST(Adjacency, SingleJointIsOne) {
  const Tensor a = normalized_adjacency(KinematicTree({-1}), {});
  EXPECT_EQ(a.values(), std::vector<double>{1.0});
}

TEST(Adjacency, TwoJointsBidirectional) {
  const Tensor a = normalized_adjacency(KinematicTree({-1, 0}), {GraphType::bidirectional});
  for (double v : a.data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Adjacency, NoneIsExactIdentity) {
  const std::size_t n = 7;
  const Tensor a = normalized_adjacency(KinematicTree::binary(n), {GraphType::none});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(a.at(i, j), i == j ? 1.0 : 0.0);
}

TEST(Adjacency, DirectedGraphsFollowParentLinks) {
  const KinematicTree tree({-1, 0, 1});
  const Tensor fwd = adjacency_matrix(tree, {GraphType::forward});
  const Tensor bwd = adjacency_matrix(tree, {GraphType::backward});
  EXPECT_EQ(fwd.at(1, 0), 1.0);
  EXPECT_EQ(fwd.at(0, 1), 0.0);
  EXPECT_EQ(bwd.at(0, 1), 1.0);
  EXPECT_EQ(bwd.at(1, 0), 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(fwd.at(j, j), 1.0);
    EXPECT_EQ(bwd.at(j, j), 1.0);
  }
}

TEST(Adjacency, SymmetricBoundedAndSeeded) {
  const KinematicTree tree = KinematicTree::binary(11);
  for (GraphType type : {GraphType::bidirectional, GraphType::random}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Tensor a = normalized_adjacency(tree, {type, seed});
      for (std::size_t i = 0; i < 11; ++i) {
        for (std::size_t j = 0; j < 11; ++j) {
          EXPECT_EQ(a.at(i, j), a.at(j, i));
          EXPECT_GE(a.at(i, j), 0.0);
          EXPECT_LE(a.at(i, j), 1.0);
        }
      }
      EXPECT_EQ(a, normalized_adjacency(tree, {type, seed}));
    }
  }
  for (GraphType type : {GraphType::forward, GraphType::backward}) {
    const Tensor a = normalized_adjacency(tree, {type});
    for (double v : a.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Expmap, ZeroIsIdentity) { EXPECT_EQ(quat_from_expmap({0, 0, 0}), (Quaternion{1, 0, 0, 0})); }

TEST(Expmap, HalfTurnAboutX) {
  const Quaternion q = quat_from_expmap({std::numbers::pi, 0, 0});
  EXPECT_NEAR(q.w, 0.0, 1e-12);
  EXPECT_NEAR(q.x, 1.0, 1e-12);
  EXPECT_NEAR(q.y, 0.0, 1e-12);
  EXPECT_NEAR(q.z, 0.0, 1e-12);
}

TEST(Expmap, RoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    const double theta = rng.uniform(0.0, std::numbers::pi * 0.999);
    for (double& c : v) c *= theta / n;
    const Vec3 back = quat_to_expmap(quat_from_expmap(v));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(back[k], v[k], 1e-9);
  }
  const Vec3 tiny{1e-9, -2e-9, 3e-9};
  const Vec3 back = quat_to_expmap(quat_from_expmap(tiny));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(back[k], tiny[k], 1e-18);
}

TEST(Euler, IdentityAndYaw) {
  const Vec3 zero = quat_to_euler({1, 0, 0, 0});
  for (double e : zero) EXPECT_EQ(e, 0.0);
  const double h = std::sqrt(0.5);
  const Vec3 yaw = quat_to_euler({h, 0, 0, h}, EulerOrder::zyx);
  EXPECT_NEAR(yaw[0], std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(yaw[1], 0.0, 1e-12);
  EXPECT_NEAR(yaw[2], 0.0, 1e-12);
}

TEST(Euler, ReconstructsRotationMatrixForEveryOrder) {
  Rng rng(2);
  for (EulerOrder order : {EulerOrder::xyz, EulerOrder::xzy, EulerOrder::yxz, EulerOrder::yzx, EulerOrder::zxy,
                           EulerOrder::zyx}) {
    for (int i = 0; i < 200; ++i) {
      const Quaternion q = random_unit(rng);
      expect_matrix_near(euler_to_matrix(quat_to_euler(q, order), order), quat_to_matrix(q), 1e-9);
    }
  }
}

TEST(Euler, GimbalLockPinsThirdAngle) {
  // 90 degrees about Y is the ZYX singularity.
  const double h = std::sqrt(0.5);
  const Quaternion q{h, 0, h, 0};
  const Vec3 e = quat_to_euler(q, EulerOrder::zyx);
  EXPECT_EQ(e[2], 0.0);
  expect_matrix_near(euler_to_matrix(e, EulerOrder::zyx), quat_to_matrix(q), 1e-9);
}

TEST(Euler, DoubleCoverInvariant) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Quaternion q = random_unit(rng);
    EXPECT_EQ(quat_to_matrix(q), quat_to_matrix(-q));
    EXPECT_EQ(quat_to_euler(q), quat_to_euler(-q));
  }
}

TEST(Euler, ZeroQuaternionRejected) {
  EXPECT_THROW(quat_to_euler({0, 0, 0, 0}), NumericError);
}

MotionSequence random_walk(std::size_t frames, std::size_t joints, Rng& rng) {
  MotionSequence seq;
  seq.tree = KinematicTree::binary(joints);
  seq.frames = Tensor({frames, joints, 4});
  for (std::size_t j = 0; j < joints; ++j) {
    Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (std::size_t t = 0; t < frames; ++t) {
      for (double& c : v) c += rng.uniform(-0.05, 0.05);
      seq.set_quat(t, j, quat_from_expmap(v));
    }
  }
  return seq;
}

TEST(Hemisphere, CanonicalSequenceUnchanged) {
  Rng rng(4);
  const MotionSequence seq = random_walk(30, 3, rng);
  EXPECT_EQ(canonicalize_hemisphere(seq).frames, seq.frames);
}

TEST(Hemisphere, RemovesNegatedFrame) {
  Rng rng(5);
  const MotionSequence seq = random_walk(30, 3, rng);
  MotionSequence flipped = seq;
  flipped.set_quat(12, 1, -seq.quat(12, 1));
  const MotionSequence fixed = canonicalize_hemisphere(flipped);
  EXPECT_EQ(fixed.frames, seq.frames);
  expect_matrix_near(quat_to_matrix(fixed.quat(12, 1)), quat_to_matrix(flipped.quat(12, 1)), 1e-12);
}

TEST(Hemisphere, ConsecutiveDotsNonNegative) {
  Rng rng(6);
  MotionSequence seq = random_walk(50, 4, rng);
  for (std::size_t t = 0; t < 50; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (rng.uniform() < 0.5) seq.set_quat(t, j, -seq.quat(t, j));
    }
  }
  const MotionSequence out = canonicalize_hemisphere(seq);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_GE(out.quat(0, j).w, 0.0);
    for (std::size_t t = 0; t + 1 < 50; ++t) EXPECT_GE(out.quat(t, j).dot(out.quat(t + 1, j)), 0.0);
  }
}

TEST(Hemisphere, ZeroNormRejected) {
  MotionSequence seq;
  seq.tree = KinematicTree({-1});
  seq.frames = Tensor({2, 1, 4}, 0.0);
  EXPECT_THROW(canonicalize_hemisphere(seq), NumericError);
}

}  // namespace
}  // namespace natmotion
