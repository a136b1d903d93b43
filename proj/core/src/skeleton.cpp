#include "natmotion/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "natmotion/error.hpp"
#include "natmotion/rng.hpp"

namespace natmotion {

std::string to_string(GraphType type) {
  switch (type) {
    case GraphType::bidirectional: return "bidirectional";
    case GraphType::forward: return "forward";
    case GraphType::backward: return "backward";
    case GraphType::none: return "none";
    case GraphType::random: return "random";
  }
  return "unknown";
}

GraphType parse_graph_type(std::string_view name) {
  for (GraphType t : {GraphType::bidirectional, GraphType::forward, GraphType::backward, GraphType::none,
                      GraphType::random}) {
    if (name == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown graph type '" + std::string(name) + "'");
}

KinematicTree::KinematicTree(std::vector<int> parents) : parents_(std::move(parents)) {
  const std::size_t n = parents_.size();
  if (n == 0) throw std::invalid_argument("kinematic tree needs at least one joint");
  std::size_t roots = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const int p = parents_[j];
    if (p == -1) {
      ++roots;
      root_ = j;
    } else if (p < 0 || static_cast<std::size_t>(p) >= n || static_cast<std::size_t>(p) == j) {
      throw std::invalid_argument("joint " + std::to_string(j) + " has invalid parent " + std::to_string(p));
    }
  }
  if (roots != 1) throw std::invalid_argument("kinematic tree must have exactly one root, found " + std::to_string(roots));
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t steps = 0;
    for (int cur = static_cast<int>(j); cur != -1; cur = parents_[static_cast<std::size_t>(cur)]) {
      if (++steps > n) throw std::invalid_argument("kinematic tree has a cycle through joint " + std::to_string(j));
    }
  }
}

KinematicTree KinematicTree::binary(std::size_t joints) {
  std::vector<int> parents(joints);
  for (std::size_t j = 0; j < joints; ++j) parents[j] = j == 0 ? -1 : static_cast<int>((j - 1) / 2);
  return KinematicTree(std::move(parents));
}

KinematicTree KinematicTree::branched(std::size_t joints) {
  static constexpr int kHead[] = {-1, 0, 1, 2, 1, 0};
  std::vector<int> parents(joints);
  for (std::size_t j = 0; j < joints; ++j) parents[j] = j < 6 ? kHead[j] : static_cast<int>(j - 1);
  return KinematicTree(std::move(parents));
}

Tensor adjacency_matrix(const KinematicTree& tree, const GraphSpec& graph) {
  const std::size_t n = tree.joints();
  Tensor a({n, n}, 0.0);
  for (std::size_t j = 0; j < n; ++j) a.at(j, j) = 1.0;
  const auto& parents = tree.parents();
  switch (graph.type) {
    case GraphType::none:
      break;
    case GraphType::bidirectional:
    case GraphType::forward:
    case GraphType::backward:
      for (std::size_t child = 0; child < n; ++child) {
        if (parents[child] < 0) continue;
        const auto parent = static_cast<std::size_t>(parents[child]);
        // Row i aggregates from column j: forward lets a child read its parent.
        if (graph.type != GraphType::backward) a.at(child, parent) = 1.0;
        if (graph.type != GraphType::forward) a.at(parent, child) = 1.0;
      }
      break;
    case GraphType::random: {
      Rng rng(graph.seed);
      const double p = std::min(1.0, 2.0 / static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (rng.uniform() < p) {
            a.at(i, j) = 1.0;
            a.at(j, i) = 1.0;
          }
        }
      }
      break;
    }
  }
  return a;
}

Tensor normalized_adjacency(const KinematicTree& tree, const GraphSpec& graph) {
  Tensor a = adjacency_matrix(tree, graph);
  const std::size_t n = tree.joints();
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.at(i, j);
    if (deg <= 0.0) throw NumericError("adjacency row " + std::to_string(i) + " has zero degree");
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  }
  return a;
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion normalized(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("cannot normalize a zero or non-finite quaternion");
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quaternion quat_from_expmap(const Vec3& v) {
  const double theta = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  // sin(theta/2) / theta, with its Taylor expansion near 0.
  const double k = theta < 1e-6 ? 0.5 - theta * theta / 48.0 : std::sin(0.5 * theta) / theta;
  return {std::cos(0.5 * theta), k * v[0], k * v[1], k * v[2]};
}

Vec3 quat_to_expmap(const Quaternion& q_in) {
  Quaternion q = normalized(q_in);
  if (q.w < 0.0) q = -q;
  const double s = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  const double theta = 2.0 * std::atan2(s, q.w);
  const double k = s < 1e-12 ? 2.0 / q.w : theta / s;
  return {k * q.x, k * q.y, k * q.z};
}

Mat3 quat_to_matrix(const Quaternion& q_in) {
  const Quaternion q = normalized(q_in);
  const double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  return Mat3{{{1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)},
               {2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)},
               {2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)}}};
}

namespace {

struct AxisTriple {
  std::size_t i, j, k;
  double parity;  // +1 for cyclic orders
};

AxisTriple axes_of(EulerOrder order) {
  switch (order) {
    case EulerOrder::xyz: return {0, 1, 2, 1.0};
    case EulerOrder::yzx: return {1, 2, 0, 1.0};
    case EulerOrder::zxy: return {2, 0, 1, 1.0};
    case EulerOrder::xzy: return {0, 2, 1, -1.0};
    case EulerOrder::yxz: return {1, 0, 2, -1.0};
    case EulerOrder::zyx: return {2, 1, 0, -1.0};
  }
  throw std::invalid_argument("unknown Euler order");
}

}  // namespace

std::string to_string(EulerOrder order) {
  switch (order) {
    case EulerOrder::xyz: return "xyz";
    case EulerOrder::xzy: return "xzy";
    case EulerOrder::yxz: return "yxz";
    case EulerOrder::yzx: return "yzx";
    case EulerOrder::zxy: return "zxy";
    case EulerOrder::zyx: return "zyx";
  }
  return "unknown";
}

EulerOrder parse_euler_order(std::string_view name) {
  for (EulerOrder o : {EulerOrder::xyz, EulerOrder::xzy, EulerOrder::yxz, EulerOrder::yzx, EulerOrder::zxy,
                       EulerOrder::zyx}) {
    if (name == to_string(o)) return o;
  }
  throw std::invalid_argument("unknown Euler order '" + std::string(name) + "'");
}

Vec3 matrix_to_euler(const Mat3& r, EulerOrder order) {
  const auto [i, j, k, s] = axes_of(order);
  const double sb = std::clamp(s * r[i][k], -1.0, 1.0);
  const double b = std::asin(sb);
  if (std::abs(sb) < 1.0 - 1e-12) {
    return {std::atan2(-s * r[j][k], r[k][k]), b, std::atan2(-s * r[i][j], r[i][i])};
  }
  // Gimbal lock: only a +- c is observable, so c is pinned to 0.
  return {std::atan2(s * r[k][j], r[j][j]), b, 0.0};
}

Vec3 quat_to_euler(const Quaternion& q, EulerOrder order) { return matrix_to_euler(quat_to_matrix(q), order); }

Quaternion MotionSequence::quat(std::size_t t, std::size_t j) const {
  const double* p = frames.ptr() + (t * joint_count() + j) * 4;
  return {p[0], p[1], p[2], p[3]};
}

void MotionSequence::set_quat(std::size_t t, std::size_t j, const Quaternion& q) {
  double* p = frames.ptr() + (t * joint_count() + j) * 4;
  p[0] = q.w;
  p[1] = q.x;
  p[2] = q.y;
  p[3] = q.z;
}

void MotionSequence::validate() const {
  if (frames.rank() != 3 || frames.dim(0) < 1 || frames.dim(1) != tree.joints() || frames.dim(2) != 4) {
    throw DataError("motion frames must be [T>=1, " + std::to_string(tree.joints()) + ", 4], got " +
                    to_string(frames.shape()));
  }
  if (!frames.all_finite()) throw DataError("motion frames contain NaN or Inf");
  if (!(fps > 0.0)) throw DataError("fps must be positive");
}

MotionSequence canonicalize_hemisphere(MotionSequence seq) {
  const std::size_t frames = seq.frame_count();
  for (std::size_t j = 0; j < seq.joint_count(); ++j) {
    Quaternion prev;
    for (std::size_t t = 0; t < frames; ++t) {
      Quaternion q = seq.quat(t, j);
      if (!(q.norm() > 0.0)) {
        throw NumericError("zero-norm quaternion at frame " + std::to_string(t) + ", joint " + std::to_string(j));
      }
      const bool flip = t == 0 ? q.w < 0.0 : q.dot(prev) < 0.0;
      if (flip) {
        q = -q;
        seq.set_quat(t, j, q);
      }
      prev = q;
    }
  }
  return seq;
}

}  // namespace natmotion
