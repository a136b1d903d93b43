#include <string>

#include "gradcheck.hpp"
#include "natmotion/model.hpp"
#include "natmotion/ops.hpp"
#include "natmotion/posenc.hpp"
#include "natmotion/training.hpp"

namespace natmotion::testing {
namespace {

TensorMap random_inputs(const std::vector<std::pair<std::string, Shape>>& specs, std::uint64_t seed) {
  Rng rng(seed);
  TensorMap out;
  for (const auto& [name, shape] : specs) out[name] = random_tensor(shape, rng);
  return out;
}

Var leaf(Tape& tape, const TensorMap& in, const std::string& name) { return tape.leaf(name, in.at(name)); }

GradCase unary(std::string name, Shape shape, std::function<Var(const Var&)> op) {
  return {name, [shape, op] {
            const TensorMap in = random_inputs({{"x", shape}}, 11);
            return gradcheck(in, [&](Tape& t, const TensorMap& v) { return project(op(leaf(t, v, "x"))); });
          }};
}

GradCase binary(std::string name, Shape a, Shape b, std::function<Var(const Var&, const Var&)> op) {
  return {name, [a, b, op] {
            const TensorMap in = random_inputs({{"a", a}, {"b", b}}, 12);
            return gradcheck(in, [&](Tape& t, const TensorMap& v) {
              return project(op(leaf(t, v, "a"), leaf(t, v, "b")));
            });
          }};
}

Tensor random_adjacency(std::size_t joints) {
  Rng rng(5);
  return random_tensor({joints, joints}, rng, 0.0, 1.0);
}

}  // namespace

std::vector<GradCase> primitive_cases() {
  std::vector<GradCase> cases;
  cases.push_back(binary("add", {3, 4}, {3, 4}, ops::add));
  cases.push_back(binary("sub", {3, 4}, {3, 4}, ops::sub));
  cases.push_back(binary("mul", {3, 4}, {3, 4}, ops::mul));
  cases.push_back(unary("scale", {3, 4}, [](const Var& x) { return ops::scale(x, -1.7); }));
  cases.push_back(unary("leaky_relu", {4, 5}, [](const Var& x) { return ops::leaky_relu(x, 0.01); }));
  cases.push_back(unary("sum", {3, 4}, [](const Var& x) { return ops::scale(ops::sum(ops::mul(x, x)), 0.5); }));
  cases.push_back(unary("mean", {3, 4}, [](const Var& x) { return ops::mean(ops::mul(x, x)); }));
  cases.push_back(unary("reshape", {3, 4}, [](const Var& x) { return ops::reshape(x, {2, 6}); }));
  cases.push_back(binary("matmul", {3, 4}, {4, 5}, ops::matmul));
  cases.push_back({"linear", [] {
                     const TensorMap in = random_inputs({{"x", {3, 4}}, {"w", {4, 5}}, {"b", {5}}}, 13);
                     return gradcheck(in, [](Tape& t, const TensorMap& v) {
                       return project(ops::linear(leaf(t, v, "x"), leaf(t, v, "w"), leaf(t, v, "b")));
                     });
                   }});
  cases.push_back(unary("log_softmax", {3, 5}, ops::log_softmax));
  cases.push_back(unary("softmax", {3, 5}, ops::softmax));
  cases.push_back(unary("cross_entropy", {4, 3}, [](const Var& x) { return ops::cross_entropy(x, {0, 2, 1, 2}); }));
  cases.push_back(unary("permute", {2, 3, 4, 5}, [](const Var& x) { return ops::permute(x, {0, 3, 1, 2}); }));
  cases.push_back(binary("concat_cols", {3, 2}, {3, 4}, ops::concat_cols));
  cases.push_back({"stack_frames", [] {
                     const TensorMap in = random_inputs({{"f0", {2, 5}}, {"f1", {2, 5}}, {"f2", {2, 5}}}, 14);
                     return gradcheck(in, [](Tape& t, const TensorMap& v) {
                       return project(ops::stack_frames({leaf(t, v, "f0"), leaf(t, v, "f1"), leaf(t, v, "f2")}));
                     });
                   }});
  cases.push_back(unary("select_frame", {2, 3, 4}, [](const Var& x) { return ops::select_frame(x, 2); }));
  cases.push_back(unary("joint_mix", {2, 3, 4, 5}, [](const Var& x) { return ops::joint_mix(x, random_adjacency(5)); }));
  cases.push_back(binary("channel_mix", {2, 3, 4, 5}, {3, 6}, ops::channel_mix));
  for (std::size_t ks : {1, 3, 5}) {
    cases.push_back({"temporal_conv_ks" + std::to_string(ks), [ks] {
                       const TensorMap in =
                           random_inputs({{"h", {2, 3, 6, 4}}, {"w", {5, 3, ks}}, {"b", {5}}}, 15 + ks);
                       return gradcheck(in, [](Tape& t, const TensorMap& v) {
                         return project(ops::temporal_conv(leaf(t, v, "h"), leaf(t, v, "w"), leaf(t, v, "b")));
                       });
                     }});
  }
  cases.push_back(binary("temporal_conv_nobias", {2, 3, 5, 2}, {4, 3, 3},
                         [](const Var& h, const Var& w) { return ops::temporal_conv(h, w, Var{}); }));
  cases.push_back(unary("mean_pool_tj", {2, 3, 4, 5}, ops::mean_pool_tj));
  cases.push_back(unary("tile_frames", {2, 6}, [](const Var& c) {
    return ops::tile_frames(c, embedding_table({6, 10.0, 500.0, 4}), 3);
  }));
  cases.push_back(binary("add_seed", {2, 4, 3, 4}, {2, 3, 4}, ops::add_seed));
  cases.push_back({"batch_norm_train", [] {
                     const TensorMap in = random_inputs({{"x", {3, 4, 5, 2}}, {"g", {4}}, {"b", {4}}}, 17);
                     return gradcheck(in, [](Tape& t, const TensorMap& v) {
                       return project(
                           ops::batch_norm_train(leaf(t, v, "x"), leaf(t, v, "g"), leaf(t, v, "b"), 1e-5, nullptr));
                     });
                   }});
  cases.push_back({"batch_norm_eval", [] {
                     const TensorMap in = random_inputs({{"x", {3, 4, 5, 2}}, {"g", {4}}, {"b", {4}}}, 18);
                     Rng rng(3);
                     const Tensor mean = random_tensor({4}, rng);
                     const Tensor var = random_tensor({4}, rng, 0.5, 2.0);
                     return gradcheck(in, [&](Tape& t, const TensorMap& v) {
                       return project(ops::batch_norm_eval(leaf(t, v, "x"), leaf(t, v, "g"), leaf(t, v, "b"), mean,
                                                           var, 1e-5));
                     });
                   }});
  cases.push_back(binary("l1_quat_loss", {2, 3, 4}, {2, 3, 4}, ops::l1_quat_loss));
  cases.push_back(unary("quat_norm_penalty", {2, 3, 4}, ops::quat_norm_penalty));
  cases.push_back(unary("dropout_fixed_mask", {4, 6}, [](const Var& x) {
    Rng rng(21);
    return ops::mul(x, x.tape()->constant(ops::dropout_mask(x.shape(), 0.5, rng)));
  }));
  return cases;
}

namespace {

// B = 2, N = 10, J = 5, M = 4.
constexpr std::size_t kB = 2, kN = 10, kJ = 5, kM = 4;

const Model& small_model(ModelKind kind = ModelKind::nat) {
  static const Model nat = [] {
    ModelConfig cfg;
    cfg.tree = KinematicTree::binary(kJ);
    cfg.given_frames = kN;
    cfg.horizon = kM;
    return make_model(ModelKind::nat, cfg, 3);
  }();
  static const Model ar = make_model(ModelKind::ar, nat.config, 4);
  return kind == ModelKind::nat ? nat : ar;
}

/// Selected parameters plus extra named inputs; the objective sees a model
/// whose parameters are replaced by the probed values.
GradCase model_case(std::string name, ModelKind kind, std::vector<std::string> params,
                    std::vector<std::pair<std::string, Shape>> extra,
                    std::function<Var(Forward&, Tape&, const TensorMap&)> body, std::size_t coords = 6) {
  return {name, [=] {
            const Model& base = small_model(kind);
            TensorMap in = random_inputs(extra, 31);
            for (const auto& p : params) in[p] = base.params.trainable.at(p);
            GradCheckOptions opt;
            opt.max_coords = coords;
            return gradcheck(
                in,
                [&](Tape& tape, const TensorMap& v) {
                  Model m = base;
                  for (const auto& p : params) m.params.trainable.at(p) = v.at(p);
                  Forward fw(tape, m, Mode::train);
                  return body(fw, tape, v);
                },
                opt);
          }};
}

std::vector<std::string> prefixed(const std::string& prefix, std::initializer_list<const char*> names) {
  std::vector<std::string> out;
  for (const char* n : names) out.push_back(prefix + n);
  return out;
}

std::vector<std::string> block_params(const std::string& prefix, bool shortcut) {
  auto out = prefixed(prefix, {".gcn.weight", ".gcn.bn.gamma", ".gcn.bn.beta", ".tcn.weight", ".tcn.bias",
                               ".tcn.bn.gamma", ".tcn.bn.beta"});
  if (shortcut) out.push_back(prefix + ".shortcut.weight");
  return out;
}

/// Quaternion-like frames: unit-ish so the losses sit in their working range.
Tensor pose_batch(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor(shape, rng, -0.6, 0.6);
}

}  // namespace

std::vector<GradCase> layer_cases() {
  std::vector<GradCase> cases;
  cases.push_back(model_case("gcn", ModelKind::nat, prefixed("encoder.block0.gcn", {".weight", ".bn.gamma", ".bn.beta"}),
                             {{"h", {kB, 4, kN, kJ}}}, [](Forward& fw, Tape& t, const TensorMap& v) {
                               return project(gcn_forward(fw, t.leaf("h", v.at("h")), "encoder.block0.gcn"));
                             }));
  cases.push_back(model_case("tcn", ModelKind::nat,
                             prefixed("encoder.block0.tcn", {".weight", ".bias", ".bn.gamma", ".bn.beta"}),
                             {{"h", {kB, 4, kN, kJ}}}, [](Forward& fw, Tape& t, const TensorMap& v) {
                               return project(tcn_forward(fw, t.leaf("h", v.at("h")), "encoder.block0.tcn"));
                             }));
  cases.push_back(model_case("block_projection_skip", ModelKind::nat, block_params("encoder.block0", true),
                             {{"h", {kB, 4, kN, kJ}}}, [](Forward& fw, Tape& t, const TensorMap& v) {
                               return project(block_forward(fw, t.leaf("h", v.at("h")), "encoder.block0"));
                             }));
  cases.push_back(model_case("block_identity_skip", ModelKind::nat, block_params("decoder.block2", false),
                             {{"h", {kB, 128, kM, kJ}}}, [](Forward& fw, Tape& t, const TensorMap& v) {
                               return project(block_forward(fw, t.leaf("h", v.at("h")), "decoder.block2"));
                             }));
  {
    std::vector<std::string> params;
    for (int i : {0, 3, 5}) {
      auto b = block_params("encoder.block" + std::to_string(i), i != 5 && i % 2 == 0);
      params.insert(params.end(), b.begin(), b.end());
    }
    cases.push_back(model_case("encoder", ModelKind::nat, params, {{"x", {kB, kN, kJ, 4}}},
                               [](Forward& fw, Tape& t, const TensorMap& v) {
                                 return project(encode_context(fw, t.leaf("x", v.at("x"))));
                               },
                               3));
  }
  {
    std::vector<std::string> params;
    for (int i : {0, 2, 5}) {
      auto b = block_params("decoder.block" + std::to_string(i), i == 5);
      params.insert(params.end(), b.begin(), b.end());
    }
    cases.push_back(model_case("decoder", ModelKind::nat, params, {{"c", {kB, 256}}, {"y0", {kB, kJ, 4}}},
                               [](Forward& fw, Tape& t, const TensorMap& v) {
                                 const Tensor table = embedding_table(fw.model().config.posenc(kM));
                                 return project(
                                     decode_frames(fw, t.leaf("c", v.at("c")), t.leaf("y0", v.at("y0")), table));
                               },
                               3));
  }
  cases.push_back(model_case("arc_with_dropout", ModelKind::nat,
                             {"arc.fc1.weight", "arc.fc1.bias", "arc.fc2.weight", "arc.fc2.bias", "arc.fc3.weight",
                              "arc.fc3.bias"},
                             {{"c", {kB, 256}}}, [](Forward& fw, Tape& t, const TensorMap& v) {
                               Rng rng(8);  // same mask on every evaluation
                               fw.dropout_rng(&rng);
                               return project(arc_classify(fw, t.leaf("c", v.at("c"))));
                             }));
  cases.push_back(model_case("ar_rollout", ModelKind::ar, {"ar.fc1.weight", "ar.fc1.bias", "ar.fc2.weight", "ar.fc2.bias"},
                             {{"c", {kB, 256}}, {"y0", {kB, kJ, 4}}}, [](Forward& fw, Tape& t, const TensorMap& v) {
                               return project(ar_rollout(fw, t.leaf("c", v.at("c")), t.leaf("y0", v.at("y0")), kM));
                             }));

  // The four loss terms, each through the full predictor.
  const Tensor truth = pose_batch({kB, kM, kJ, 4}, 41);
  const std::vector<std::string> head = {"decoder.block5.tcn.weight", "decoder.block5.tcn.bias",
                                         "decoder.block4.gcn.weight", "encoder.block5.tcn.bias",
                                         "arc.fc3.weight", "arc.fc1.weight"};
  auto loss_case = [&](std::string name, std::function<Var(Forward&, Tape&, const NatOutputs&)> term) {
    return model_case(name, ModelKind::nat, head, {{"x", {kB, kN, kJ, 4}}},
                      [term](Forward& fw, Tape& t, const TensorMap& v) {
                        const NatOutputs out = nat_forward(fw, t.leaf("x", v.at("x")), kM);
                        return term(fw, t, out);
                      },
                      4);
  };
  cases.push_back(loss_case("loss_recst", [truth](Forward&, Tape& t, const NatOutputs& o) {
    return ops::l1_quat_loss(o.predictions, t.constant(truth));
  }));
  cases.push_back(loss_case("loss_pnlty", [](Forward&, Tape&, const NatOutputs& o) {
    return ops::quat_norm_penalty(o.predictions);
  }));
  cases.push_back(loss_case("loss_cls1", [](Forward&, Tape&, const NatOutputs& o) {
    return ops::cross_entropy(o.logits, {1, 2});
  }));
  cases.push_back(loss_case("loss_cls2_cycle", [](Forward& fw, Tape& t, const NatOutputs& o) {
    Forward cycle(t, fw.model(), Mode::train);
    return ops::cross_entropy(arc_logits(cycle, encode_context(cycle, o.predictions)), {1, 2});
  }));
  cases.push_back(loss_case("objective_total", [truth](Forward& fw, Tape& t, const NatOutputs& o) {
    Forward cycle(t, fw.model(), Mode::train);
    const Var cls2 = ops::cross_entropy(arc_logits(cycle, encode_context(cycle, o.predictions)), {1, 2});
    const Var cls = ops::add(ops::cross_entropy(o.logits, {1, 2}), cls2);
    const Var rec = ops::l1_quat_loss(o.predictions, t.constant(truth));
    return ops::add(ops::add(rec, ops::scale(ops::quat_norm_penalty(o.predictions), 0.01)), ops::scale(cls, 0.01));
  }));
  return cases;
}

}  // namespace natmotion::testing
