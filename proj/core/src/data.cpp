#include "natmotion/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"

#include "natmotion/error.hpp"
#include "natmotion/rng.hpp"

namespace natmotion {
namespace {

using nlohmann::json;

template <typename T>
T field(const json& doc, const char* key) {
  if (!doc.contains(key)) throw DataError(std::string("sequence file is missing \"") + key + "\"");
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("sequence file field \"") + key + "\" has the wrong type");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

MotionSequence parse_sequence(std::string_view text, const LoadOptions& options) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("sequence file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("sequence file must be a JSON object");
  if (field<std::string>(doc, "schema") != kSequenceSchema) {
    throw DataError("unsupported sequence schema, expected " + std::string(kSequenceSchema));
  }

  const auto joints = field<std::size_t>(doc, "joints");
  const auto parents = field<std::vector<int>>(doc, "parents");
  if (parents.size() != joints) throw DataError("\"parents\" must list one entry per joint");
  const auto repr = field<std::string>(doc, "repr");
  if (repr != "quat" && repr != "expmap") throw DataError("\"repr\" must be \"quat\" or \"expmap\"");
  const std::size_t k = repr == "quat" ? 4 : 3;

  MotionSequence seq;
  try {
    seq.tree = KinematicTree(parents);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid kinematic tree: ") + e.what());
  }
  seq.action = field<std::string>(doc, "action");
  seq.fps = field<double>(doc, "fps");

  if (!doc.contains("frames") || !doc.at("frames").is_array()) throw DataError("\"frames\" must be an array");
  const json& frames = doc.at("frames");
  if (frames.empty()) throw DataError("sequence has no frames");
  seq.frames = Tensor({frames.size(), joints, 4});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const json& frame = frames[t];
    if (!frame.is_array() || frame.size() != joints) {
      throw DataError("frame " + std::to_string(t) + " must hold " + std::to_string(joints) + " joints");
    }
    for (std::size_t j = 0; j < joints; ++j) {
      const json& row = frame[j];
      if (!row.is_array() || row.size() != k) {
        throw DataError("frame " + std::to_string(t) + ", joint " + std::to_string(j) + " must have " +
                        std::to_string(k) + " components");
      }
      std::array<double, 4> v{};
      for (std::size_t c = 0; c < k; ++c) {
        if (!row[c].is_number()) throw DataError("frame " + std::to_string(t) + " has a non-numeric component");
        v[c] = row[c].get<double>();
        if (!std::isfinite(v[c])) throw DataError("frame " + std::to_string(t) + " contains NaN or Inf");
      }
      const Quaternion q = k == 4 ? Quaternion{v[0], v[1], v[2], v[3]} : quat_from_expmap({v[0], v[1], v[2]});
      seq.set_quat(t, j, q);
    }
  }
  seq.validate();
  if (!options.drop_joints.empty()) seq = drop_joints(seq, options.drop_joints);
  try {
    return canonicalize_hemisphere(std::move(seq));
  } catch (const NumericError& e) {
    throw DataError(e.what());
  }
}

std::string format_sequence(const MotionSequence& seq, Rotation repr) {
  seq.validate();
  json frames = json::array();
  for (std::size_t t = 0; t < seq.frame_count(); ++t) {
    json frame = json::array();
    for (std::size_t j = 0; j < seq.joint_count(); ++j) {
      const Quaternion q = seq.quat(t, j);
      if (repr == Rotation::quat) {
        frame.push_back({q.w, q.x, q.y, q.z});
      } else {
        const Vec3 v = quat_to_expmap(q);
        frame.push_back({v[0], v[1], v[2]});
      }
    }
    frames.push_back(std::move(frame));
  }
  const json doc{{"schema", kSequenceSchema},
                 {"action", seq.action},
                 {"fps", seq.fps},
                 {"joints", seq.joint_count()},
                 {"parents", seq.tree.parents()},
                 {"repr", repr == Rotation::quat ? "quat" : "expmap"},
                 {"frames", std::move(frames)}};
  return doc.dump();
}

MotionSequence load_sequence(const std::filesystem::path& path, const LoadOptions& options) {
  try {
    return parse_sequence(read_file(path), options);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_sequence(const std::filesystem::path& path, const MotionSequence& seq, Rotation repr) {
  write_file(path, format_sequence(seq, repr));
}

MotionSequence drop_joints(const MotionSequence& seq, std::vector<std::size_t> joints) {
  const std::size_t n = seq.joint_count();
  std::vector<bool> dropped(n, false);
  for (std::size_t j : joints) {
    if (j >= n) throw DataError("cannot drop joint " + std::to_string(j) + " of " + std::to_string(n));
    dropped[j] = true;
  }
  std::vector<std::size_t> kept;
  std::vector<int> remap(n, -1);
  for (std::size_t j = 0; j < n; ++j) {
    if (!dropped[j]) {
      remap[j] = static_cast<int>(kept.size());
      kept.push_back(j);
    }
  }
  if (kept.empty()) throw DataError("cannot drop every joint");

  // Nearest kept ancestor; joints left without one are attached to the first
  // of them, which becomes the new root.
  const auto& parents = seq.tree.parents();
  std::vector<int> new_parents(kept.size(), -1);
  int root = -1;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    int p = parents[kept[i]];
    while (p != -1 && dropped[static_cast<std::size_t>(p)]) p = parents[static_cast<std::size_t>(p)];
    if (p != -1) {
      new_parents[i] = remap[static_cast<std::size_t>(p)];
    } else if (root == -1) {
      root = static_cast<int>(i);
    } else {
      new_parents[i] = root;
    }
  }

  MotionSequence out;
  out.tree = KinematicTree(new_parents);
  out.fps = seq.fps;
  out.action = seq.action;
  out.label = seq.label;
  out.frames = Tensor({seq.frame_count(), kept.size(), 4});
  for (std::size_t t = 0; t < seq.frame_count(); ++t) {
    for (std::size_t i = 0; i < kept.size(); ++i) out.set_quat(t, i, seq.quat(t, kept[i]));
  }
  return out;
}

MotionSequence downsample(const MotionSequence& seq, double target_fps) {
  if (!(target_fps > 0.0)) throw DataError("target fps must be positive");
  const double ratio = seq.fps / target_fps;
  const double step = std::round(ratio);
  if (step < 1.0 || std::abs(ratio - step) > 1e-9 * ratio) {
    throw DataError("cannot downsample " + std::to_string(seq.fps) + " fps to " + std::to_string(target_fps) +
                    " fps: rates are not an integer multiple");
  }
  const auto stride = static_cast<std::size_t>(step);
  if (stride == 1) return seq;
  const std::size_t frames = (seq.frame_count() + stride - 1) / stride;
  MotionSequence out = seq;
  out.fps = target_fps;
  out.frames = Tensor({frames, seq.joint_count(), 4});
  const std::size_t inner = seq.joint_count() * 4;
  for (std::size_t t = 0; t < frames; ++t) {
    std::copy_n(seq.frames.ptr() + t * stride * inner, inner, out.frames.ptr() + t * inner);
  }
  return out;
}

void WindowSpec::validate() const {
  if (given == 0 || horizon == 0) throw std::invalid_argument("window lengths N and M must be >= 1");
  if (stride == 0) throw std::invalid_argument("window stride must be >= 1");
}

std::vector<Window> make_windows(const MotionSequence& seq, const WindowSpec& spec, std::size_t sequence_index) {
  spec.validate();
  std::vector<Window> out;
  const std::size_t total = spec.given + spec.horizon;
  if (seq.frame_count() < total) return out;
  const std::size_t inner = seq.joint_count() * 4;
  for (std::size_t start = 0; start + total <= seq.frame_count(); start += spec.stride) {
    Window w;
    w.observed = Tensor({spec.given, seq.joint_count(), 4});
    w.target = Tensor({spec.horizon, seq.joint_count(), 4});
    const double* src = seq.frames.ptr() + start * inner;
    std::copy_n(src, spec.given * inner, w.observed.ptr());
    std::copy_n(src + spec.given * inner, spec.horizon * inner, w.target.ptr());
    w.label = seq.label;
    w.sequence = sequence_index;
    w.start = start;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Window> make_windows(const std::vector<MotionSequence>& seqs, const WindowSpec& spec) {
  std::vector<Window> out;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto part = make_windows(seqs[i], spec, i);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

namespace {

Tensor stack(const std::vector<Window>& windows, const std::vector<std::size_t>& indices, bool observed) {
  if (indices.empty()) throw std::invalid_argument("cannot stack an empty batch");
  const Tensor& first = observed ? windows.at(indices[0]).observed : windows.at(indices[0]).target;
  Shape shape{indices.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  Tensor out(shape);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& src = observed ? windows.at(indices[b]).observed : windows.at(indices[b]).target;
    if (src.shape() != first.shape()) throw ShapeError("windows in a batch must share their shape");
    std::copy_n(src.ptr(), src.size(), out.ptr() + b * first.size());
  }
  return out;
}

}  // namespace

Tensor stack_observed(const std::vector<Window>& windows, const std::vector<std::size_t>& indices) {
  return stack(windows, indices, true);
}

Tensor stack_targets(const std::vector<Window>& windows, const std::vector<std::size_t>& indices) {
  return stack(windows, indices, false);
}

void assign_labels(std::vector<MotionSequence>& seqs, const std::vector<std::string>& class_names) {
  for (auto& seq : seqs) {
    const auto it = std::find(class_names.begin(), class_names.end(), seq.action);
    if (it == class_names.end()) throw DataError("action '" + seq.action + "' is not a known class");
    seq.label = static_cast<std::size_t>(it - class_names.begin());
  }
}

Dataset load_dataset(const std::filesystem::path& dir, const LoadOptions& options) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json" && entry.path().filename() != "index.json") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw DataError("no sequence files in " + dir.string());
  std::sort(files.begin(), files.end());

  Dataset data;
  std::set<std::string> actions;
  for (const auto& file : files) {
    data.sequences.push_back(load_sequence(file, options));
    actions.insert(data.sequences.back().action);
  }
  const auto& parents = data.sequences.front().tree.parents();
  for (const auto& seq : data.sequences) {
    if (seq.tree.parents() != parents) throw DataError("sequences in " + dir.string() + " use different skeletons");
  }
  data.class_names.assign(actions.begin(), actions.end());
  assign_labels(data.sequences, data.class_names);
  return data;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<MotionSequence>& seqs) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "_%05zu.json", i);
    save_sequence(dir / (seqs[i].action + name), seqs[i]);
  }
}

std::vector<std::pair<double, double>> SyntheticSpec::class_bands() const {
  std::vector<std::pair<double, double>> out = bands;
  if (out.empty()) {
    constexpr double lo = 0.05, hi = 0.24;
    const double width = (hi - lo) / static_cast<double>(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      const double start = lo + width * static_cast<double>(c);
      out.emplace_back(start, start + 0.8 * width);
    }
  }
  if (out.size() != classes) throw std::invalid_argument("need exactly one frequency band per class");
  for (const auto& [a, b] : out) {
    if (!(a > 0.0) || !(b >= a)) throw std::invalid_argument("frequency bands must satisfy 0 < lo <= hi");
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = i + 1; j < out.size(); ++j) {
      if (out[i].first <= out[j].second && out[j].first <= out[i].second) {
        throw std::invalid_argument("frequency bands of classes " + std::to_string(i) + " and " + std::to_string(j) +
                                    " overlap");
      }
    }
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic data needs at least two classes");
  if (joints < 1 || frames < 1 || seqs_per_class < 1) throw std::invalid_argument("synthetic sizes must be >= 1");
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
  if (min_amplitude < 0.0 || max_amplitude < min_amplitude) {
    throw std::invalid_argument("amplitudes must satisfy 0 <= min <= max");
  }
  if (max_amplitude * (1.0 + amplitude_jitter) >= std::numbers::pi) {
    throw std::invalid_argument("amplitudes must stay below pi");
  }
  if (amplitude_jitter < 0.0 || amplitude_jitter >= 1.0 || noise < 0.0) {
    throw std::invalid_argument("jitter must be in [0, 1) and noise >= 0");
  }
  class_bands();
}

std::string synthetic_class_name(std::size_t c) { return "class" + std::to_string(c); }

std::vector<MotionSequence> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto bands = spec.class_bands();

  struct Drive {
    Vec3 axis;
    double amplitude;
    double frequency;
  };
  Rng class_rng(spec.class_seed);
  std::vector<std::vector<Drive>> drives(spec.classes, std::vector<Drive>(spec.joints));
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (auto& d : drives[c]) {
      Vec3 a{};
      double n = 0.0;
      while (n < 1e-3) {
        a = {class_rng.normal(), class_rng.normal(), class_rng.normal()};
        n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
      }
      d.axis = {a[0] / n, a[1] / n, a[2] / n};
      d.amplitude = class_rng.uniform(spec.min_amplitude, spec.max_amplitude);
      d.frequency = class_rng.uniform(bands[c].first, bands[c].second);
    }
  }

  Rng rng(spec.seed);
  const KinematicTree tree = KinematicTree::branched(spec.joints);
  std::vector<MotionSequence> out;
  out.reserve(spec.classes * spec.seqs_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.seqs_per_class; ++s) {
      MotionSequence seq;
      seq.tree = tree;
      seq.fps = spec.fps;
      seq.action = synthetic_class_name(c);
      seq.label = c;
      seq.frames = Tensor({spec.frames, spec.joints, 4});
      std::vector<double> phase(spec.joints), gain(spec.joints);
      for (std::size_t j = 0; j < spec.joints; ++j) {
        phase[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        gain[j] = 1.0 + rng.uniform(-spec.amplitude_jitter, spec.amplitude_jitter);
      }
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const double time = static_cast<double>(t) / spec.fps;
        for (std::size_t j = 0; j < spec.joints; ++j) {
          const Drive& d = drives[c][j];
          const double angle =
              gain[j] * d.amplitude * std::sin(2.0 * std::numbers::pi * d.frequency * time + phase[j]);
          Vec3 v{angle * d.axis[0], angle * d.axis[1], angle * d.axis[2]};
          if (spec.noise > 0.0) {
            for (double& x : v) x += spec.noise * rng.normal();
          }
          seq.set_quat(t, j, quat_from_expmap(v));
        }
      }
      out.push_back(canonicalize_hemisphere(std::move(seq)));
    }
  }
  return out;
}

}  // namespace natmotion
