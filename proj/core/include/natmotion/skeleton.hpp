#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "natmotion/tensor.hpp"

namespace natmotion {

/// Edge pattern used to build the joint adjacency (self loops always present).
enum class GraphType { bidirectional, forward, backward, none, random };

std::string to_string(GraphType type);
GraphType parse_graph_type(std::string_view name);

struct GraphSpec {
  GraphType type = GraphType::bidirectional;
  std::uint64_t seed = 0;  // only used by GraphType::random
};

/// Rooted joint hierarchy; parents[root] == -1.
class KinematicTree {
 public:
  KinematicTree() = default;
  /// Throws std::invalid_argument unless the links form a single rooted tree.
  explicit KinematicTree(std::vector<int> parents);

  /// parents[j] = (j - 1) / 2.
  static KinematicTree binary(std::size_t joints);
  /// Default synthetic skeleton: a binary tree whose three branches meet at
  /// joint 1 with lengths 2, 1 and joints - 4 (the last one through the root).
  /// From 7 joints on its graph has no automorphism, so a GCN fed the same
  /// vector at every joint can still tell all joints apart.
  static KinematicTree branched(std::size_t joints);

  std::size_t joints() const { return parents_.size(); }
  const std::vector<int>& parents() const { return parents_; }
  std::size_t root() const { return root_; }

  friend bool operator==(const KinematicTree&, const KinematicTree&) = default;

 private:
  std::vector<int> parents_;
  std::size_t root_ = 0;
};

/// Raw 0/1 adjacency A (J x J) with unit diagonal.
Tensor adjacency_matrix(const KinematicTree& tree, const GraphSpec& graph);

/// D^{-1/2} A D^{-1/2} with D_ii = sum_j A_ij.
Tensor normalized_adjacency(const KinematicTree& tree, const GraphSpec& graph);

struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  double norm() const;
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Throws NumericError for a zero-norm quaternion.
Quaternion normalized(const Quaternion& q);

/// Axis-angle (rotation vector) to unit quaternion.
Quaternion quat_from_expmap(const Vec3& v);
/// Inverse of quat_from_expmap with angle in [0, pi].
Vec3 quat_to_expmap(const Quaternion& q);

/// Rotation matrix of q / |q|.
Mat3 quat_to_matrix(const Quaternion& q);

/// Intrinsic Tait-Bryan sequences; zyx means R = Rz(a) Ry(b) Rx(c).
enum class EulerOrder { xyz, xzy, yxz, yzx, zxy, zyx };

std::string to_string(EulerOrder order);
EulerOrder parse_euler_order(std::string_view name);

/// Angles (a, b, c) in the order the axes are named. At gimbal lock the
/// third angle is set to 0. Throws NumericError for zero-norm input.
Vec3 matrix_to_euler(const Mat3& r, EulerOrder order);
Vec3 quat_to_euler(const Quaternion& q, EulerOrder order = EulerOrder::zyx);

/// A [T, J, 4] quaternion track plus its skeleton and metadata.
struct MotionSequence {
  KinematicTree tree;
  Tensor frames;
  double fps = 25.0;
  std::string action;
  std::optional<std::size_t> label;

  std::size_t frame_count() const { return frames.rank() == 3 ? frames.dim(0) : 0; }
  std::size_t joint_count() const { return tree.joints(); }

  Quaternion quat(std::size_t t, std::size_t j) const;
  void set_quat(std::size_t t, std::size_t j, const Quaternion& q);

  /// Throws DataError unless frames is [T >= 1, J, 4] and finite.
  void validate() const;
};

/// Flips signs so every joint track starts with w >= 0 and consecutive
/// quaternions have a nonnegative dot product. Throws NumericError on zero norm.
MotionSequence canonicalize_hemisphere(MotionSequence seq);

}  // namespace natmotion
