#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "natmotion/skeleton.hpp"
#include "natmotion/tensor.hpp"

namespace natmotion {

inline constexpr std::string_view kSequenceSchema = "natmotion/1";

enum class Rotation { quat, expmap };

struct LoadOptions {
  /// Joint indices holding global translation/rotation. They are removed and
  /// their children reattached to the removed joint's parent.
  std::vector<std::size_t> drop_joints;
};

/// Parses a SequenceFile document:
///   {"schema": "natmotion/1", "action": str, "fps": num, "joints": J,
///    "parents": [J ints, -1 for the root], "repr": "quat" | "expmap",
///    "frames": T x J x K nested arrays, K = 4 (quat) or 3 (expmap)}
/// Exponential maps become quaternions and every joint track is
/// hemisphere-canonicalized. Throws DataError.
MotionSequence parse_sequence(std::string_view text, const LoadOptions& options = {});
std::string format_sequence(const MotionSequence& seq, Rotation repr = Rotation::quat);

MotionSequence load_sequence(const std::filesystem::path& path, const LoadOptions& options = {});
void save_sequence(const std::filesystem::path& path, const MotionSequence& seq, Rotation repr = Rotation::quat);

/// Removes joints (and their rows in every frame) from a sequence.
MotionSequence drop_joints(const MotionSequence& seq, std::vector<std::size_t> joints);

/// Keeps every (fps / target_fps)-th frame from frame 0. The ratio must be a
/// positive integer; throws DataError otherwise.
MotionSequence downsample(const MotionSequence& seq, double target_fps);

struct WindowSpec {
  std::size_t given = 50;   // N
  std::size_t horizon = 10; // M
  std::size_t stride = 5;
  void validate() const;
};

struct Window {
  Tensor observed;  // [N, J, 4]
  Tensor target;    // [M, J, 4]
  std::optional<std::size_t> label;
  std::size_t sequence = 0;  // index into the source list
  std::size_t start = 0;     // first observed frame
};

/// Sliding windows; an empty list if the sequence is shorter than N + M.
std::vector<Window> make_windows(const MotionSequence& seq, const WindowSpec& spec, std::size_t sequence_index = 0);
std::vector<Window> make_windows(const std::vector<MotionSequence>& seqs, const WindowSpec& spec);

/// Stacks windows into batch tensors [B, N, J, 4] and [B, M, J, 4].
Tensor stack_observed(const std::vector<Window>& windows, const std::vector<std::size_t>& indices);
Tensor stack_targets(const std::vector<Window>& windows, const std::vector<std::size_t>& indices);

struct Dataset {
  std::vector<MotionSequence> sequences;
  std::vector<std::string> class_names;  // label i <-> class_names[i]
};

/// Loads every *.json file of a flat directory in filename order. Labels index
/// the sorted set of action names. Throws DataError on an empty directory or
/// inconsistent skeletons.
Dataset load_dataset(const std::filesystem::path& dir, const LoadOptions& options = {});
/// Writes one SequenceFile per sequence as <action>_<index>.json.
void save_dataset(const std::filesystem::path& dir, const std::vector<MotionSequence>& seqs);
/// Re-labels sequences against a fixed class list; throws DataError on unknown actions.
void assign_labels(std::vector<MotionSequence>& seqs, const std::vector<std::string>& class_names);

/// Labeled sinusoidal motion on KinematicTree::branched(joints). Class c drives joint
/// j about a fixed axis with angle A_{c,j} sin(2 pi f_{c,j} t + phi), f_{c,j}
/// inside the class's frequency band. Axes, amplitudes and frequencies depend
/// on class_seed only; phases, amplitude jitter and noise on seed, so datasets
/// with different seeds share their classes.
struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t joints = 8;
  std::size_t seqs_per_class = 60;
  std::size_t frames = 120;
  double fps = 25.0;
  /// Frequency bands in Hz, one per class; empty selects an even split of
  /// [0.05, 0.24] with gaps between neighbours.
  std::vector<std::pair<double, double>> bands;
  double min_amplitude = 0.4;  // radians
  double max_amplitude = 1.2;
  double amplitude_jitter = 0.1;  // relative, per sequence
  double noise = 0.0;             // std-dev of Gaussian axis-angle noise, radians
  std::uint64_t seed = 0;
  std::uint64_t class_seed = 0;

  /// Resolved bands; throws std::invalid_argument on overlap or bad values.
  std::vector<std::pair<double, double>> class_bands() const;
  void validate() const;
};

std::string synthetic_class_name(std::size_t c);
std::vector<MotionSequence> generate_synthetic(const SyntheticSpec& spec);

}  // namespace natmotion
