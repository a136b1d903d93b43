#include "natmotion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "natmotion/error.hpp"

namespace natmotion {
namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "NATCKPT1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

json config_to_json(const ModelConfig& c) {
  return json{{"parents", c.tree.parents()},
              {"graph", to_string(c.graph.type)},
              {"graph_seed", c.graph.seed},
              {"class_names", c.class_names},
              {"encoder_ks", c.encoder_ks},
              {"d_model", kContextWidth},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"given_frames", c.given_frames},
              {"horizon", c.horizon},
              {"fps", c.fps},
              {"euler_order", c.euler_order},
              {"arc_hidden", {c.arc_hidden1, c.arc_hidden2}},
              {"arc_dropout", c.arc_dropout},
              {"leaky_slope", c.leaky_slope},
              {"bn_momentum", c.bn_momentum},
              {"bn_eps", c.bn_eps},
              {"ar_hidden", c.ar_hidden}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.tree = KinematicTree(j.at("parents").get<std::vector<int>>());
  c.graph.type = parse_graph_type(j.at("graph").get<std::string>());
  c.graph.seed = j.at("graph_seed").get<std::uint64_t>();
  c.class_names = j.at("class_names").get<std::vector<std::string>>();
  c.encoder_ks = j.at("encoder_ks").get<std::size_t>();
  if (j.at("d_model").get<std::size_t>() != kContextWidth) throw DataError("checkpoint d_model must be 256");
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.given_frames = j.at("given_frames").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.fps = j.at("fps").get<double>();
  c.euler_order = j.at("euler_order").get<std::string>();
  const auto hidden = j.at("arc_hidden").get<std::vector<std::size_t>>();
  if (hidden.size() != 2) throw DataError("checkpoint arc_hidden must list two widths");
  c.arc_hidden1 = hidden[0];
  c.arc_hidden2 = hidden[1];
  c.arc_dropout = j.at("arc_dropout").get<double>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  c.bn_eps = j.at("bn_eps").get<double>();
  c.ar_hidden = j.at("ar_hidden").get<std::size_t>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  json tensors = json::array();
  auto list = [&tensors](const TensorMap& map, const char* role) {
    for (const auto& [path, t] : map) tensors.push_back(json{{"path", path}, {"role", role}, {"shape", t.shape()}});
  };
  list(model.params.trainable, "param");
  list(model.params.buffers, "buffer");
  const json manifest{{"format", kMagic},
                      {"kind", to_string(model.kind)},
                      {"config", config_to_json(model.config)},
                      {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::string out(kMagic);
  put_u64(out, text.size());
  out += text;
  for (const TensorMap* map : {&model.params.trainable, &model.params.buffers}) {
    for (const auto& [path, t] : *map) {
      for (double v : t.data()) put_f64(out, v);
    }
  }
  return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kMagic) throw DataError("not a NATCKPT1 checkpoint");
  const std::uint64_t length = get_u64(bytes.substr(8, 8));
  if (length > bytes.size() - 16) throw DataError("checkpoint manifest is truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, length));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }

  Model model;
  std::size_t cursor = 16 + length;
  try {
    model.kind = parse_model_kind(manifest.at("kind").get<std::string>());
    model.config = config_from_json(manifest.at("config"));
    model.config.validate();
    for (const json& entry : manifest.at("tensors")) {
      const auto path = entry.at("path").get<std::string>();
      const auto role = entry.at("role").get<std::string>();
      Tensor t(entry.at("shape").get<Shape>());
      if (bytes.size() - cursor < 8 * t.size()) throw DataError("checkpoint tensor data is truncated at " + path);
      for (double& v : t.data()) {
        v = std::bit_cast<double>(get_u64(bytes.substr(cursor, 8)));
        cursor += 8;
      }
      if (role == "param") {
        model.params.trainable.emplace(path, std::move(t));
      } else if (role == "buffer") {
        model.params.buffers.emplace(path, std::move(t));
      } else {
        throw DataError("unknown tensor role '" + role + "'");
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is incomplete: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint config is invalid: ") + e.what());
  }
  if (cursor != bytes.size()) throw DataError("checkpoint has trailing bytes");

  // Reject checkpoints whose tensors do not match the architecture they declare.
  const Model reference = make_model(model.kind, model.config, 0);
  auto same_layout = [](const TensorMap& a, const TensorMap& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
      if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    }
    return true;
  };
  if (!same_layout(model.params.trainable, reference.params.trainable) ||
      !same_layout(model.params.buffers, reference.params.buffers)) {
    throw DataError("checkpoint tensors do not match the declared architecture");
  }
  model.adjacency = reference.adjacency;
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

std::string fnv1a64_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

std::string checkpoint_digest(const Model& model) { return fnv1a64_hex(serialize_checkpoint(model)); }

}  // namespace natmotion
