#include "cli.hpp"

#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "natmotion/checkpoint.hpp"
#include "natmotion/data.hpp"
#include "natmotion/error.hpp"
#include "natmotion/eval.hpp"
#include "natmotion/posenc.hpp"
#include "natmotion/training.hpp"

namespace natmotion::cli {
namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed writing " + path);
}

std::vector<int> parse_horizons(const std::string& list) {
  std::vector<int> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    int ms = 0;
    try {
      ms = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument("bad horizon '" + item + "'");
    out.push_back(ms);
  }
  if (out.empty()) throw std::invalid_argument("no horizons given");
  return out;
}

struct GenArgs {
  std::string out;
  SyntheticSpec spec;
};

struct TrainArgs {
  std::string data, out, log, model = "nat", graph = "bidirectional", encoder_from;
  TrainConfig cfg;
  std::uint64_t init_seed = 0;
  bool init_seed_set = false;
};

struct PredictArgs {
  std::string ckpt, input, out;
  std::size_t horizon = 10;
};

struct EvalArgs {
  std::string ckpt, data, out, horizons = "80,160,320,400,560,1000", euler = "zyx";
  std::size_t stride = 5;
};

struct PosencArgs {
  PosEncConfig cfg;
  std::string out;
};

struct LabArgs {
  std::string nat, ar, data, out;
  double delta = 0.05;
  std::size_t horizon = 25;
  std::size_t stride = 5;
};

int gen_synthetic(const GenArgs& a, std::ostream& out) {
  const auto seqs = generate_synthetic(a.spec);
  save_dataset(a.out, seqs);
  out << "wrote " << seqs.size() << " sequences to " << a.out << "\n";
  return ok;
}

int train_command(TrainArgs a, std::ostream& out) {
  a.cfg.kind = parse_model_kind(a.model);
  a.cfg.graph.type = parse_graph_type(a.graph);
  const Dataset data = load_dataset(a.data);
  Model model = make_model(a.cfg.kind, model_config(a.cfg, data), a.init_seed_set ? a.init_seed : a.cfg.seed);
  if (!a.encoder_from.empty()) {
    if (a.cfg.kind != ModelKind::ar) throw std::invalid_argument("--encoder-from applies to AR models only");
    const Model source = load_checkpoint(a.encoder_from);
    if (source.config.tree.parents() != model.config.tree.parents() ||
        source.config.encoder_ks != model.config.encoder_ks || source.config.graph.type != model.config.graph.type) {
      throw DataError("encoder checkpoint does not match the skeleton, kernel size or graph");
    }
    for (const TensorMap* src : {&source.params.trainable, &source.params.buffers}) {
      for (const auto& [path, t] : *src) {
        if (path.rfind("encoder.", 0) != 0) continue;
        TensorMap& dst = src == &source.params.trainable ? model.params.trainable : model.params.buffers;
        dst.at(path) = t;
      }
    }
    model.adjacency = source.adjacency;
    a.cfg.freeze_encoder = true;
  }
  const auto windows = make_windows(data.sequences, a.cfg.windows());

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::binary);
    if (!log) throw DataError("cannot write " + a.log);
    log << loss_csv_header();
  }
  const TrainResult result = train(std::move(model), windows, a.cfg, [&](const IterationLog& row) {
    if (log.is_open()) log << loss_csv_row(row) << std::flush;
  });
  save_checkpoint(a.out, result.model);
  const IterationLog& last = result.log.back();
  out << "trained " << result.log.size() << " iterations on " << windows.size() << " windows; final recst "
      << last.loss.recst << ", total " << last.loss.total << "\n";
  return ok;
}

int predict_command(const PredictArgs& a, std::ostream& out) {
  const Model model = load_checkpoint(a.ckpt);
  const MotionSequence seq = load_sequence(a.input);
  const std::size_t given = model.config.given_frames;
  if (seq.tree.parents() != model.config.tree.parents()) throw DataError("input skeleton differs from the checkpoint");
  if (seq.frame_count() < given) {
    throw DataError("input has " + std::to_string(seq.frame_count()) + " frames, the model needs " +
                    std::to_string(given));
  }
  if (a.horizon == 0) throw std::invalid_argument("--m must be >= 1");
  const std::size_t inner = seq.joint_count() * 4;
  Tensor observed({1, given, seq.joint_count(), 4});
  std::copy_n(seq.frames.ptr() + (seq.frame_count() - given) * inner, given * inner, observed.ptr());
  const Prediction p = predict(model, observed, a.horizon);

  MotionSequence result;
  result.tree = seq.tree;
  result.fps = seq.fps;
  result.action = seq.action;
  result.frames = p.frames.reshaped({a.horizon, seq.joint_count(), 4});
  auto doc = nlohmann::ordered_json::parse(format_sequence(result));
  if (!p.probabilities.empty()) {
    nlohmann::ordered_json probs = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < model.config.classes(); ++c) probs[model.config.class_names[c]] = p.probabilities[c];
    doc["class_probabilities"] = probs;
    doc["predicted_action"] = model.config.class_names[argmax(p.probabilities.data())];
  }
  write_text(a.out, doc.dump() + "\n");
  out << "wrote " << a.horizon << " predicted frames to " << a.out << "\n";
  return ok;
}

int eval_command(const EvalArgs& a, std::ostream& out) {
  const Model model = load_checkpoint(a.ckpt);
  EvalConfig cfg;
  cfg.horizons_ms = parse_horizons(a.horizons);
  cfg.order = parse_euler_order(a.euler);
  cfg.stride = a.stride;
  const Dataset data = load_dataset(a.data);
  const EvalReport report = evaluate(model, data, cfg);
  const std::string json = report.to_json();
  if (a.out.empty()) {
    out << json;
  } else {
    write_text(a.out, json);
    out << "evaluated " << report.windows << " windows; report in " << a.out << "\n";
  }
  return ok;
}

int posenc_command(const PosencArgs& a, std::ostream& out) {
  a.cfg.validate();
  const Tensor table = embedding_table(a.cfg);
  std::string csv = "t";
  for (std::size_t d = 0; d < a.cfg.d_model; ++d) csv += ",p" + std::to_string(d);
  csv += "\n";
  char cell[40];
  for (std::size_t t = 0; t < a.cfg.horizon; ++t) {
    csv += std::to_string(t + 1);
    for (std::size_t d = 0; d < a.cfg.d_model; ++d) {
      std::snprintf(cell, sizeof(cell), ",%.17g", table.at(t, d));
      csv += cell;
    }
    csv += "\n";
  }
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
  }
  return ok;
}

int lab_error_accum(const LabArgs& a, std::ostream& out) {
  const Model nat = load_checkpoint(a.nat);
  const Model ar = load_checkpoint(a.ar);
  if (nat.config.given_frames != ar.config.given_frames) throw DataError("NAT and AR checkpoints use different N");
  std::vector<MotionSequence> seqs = load_dataset(a.data).sequences;
  const auto windows = make_windows(seqs, {nat.config.given_frames, a.horizon, a.stride});
  const AccumulationCurves curves = error_accumulation_experiment(nat, ar, windows, a.delta, a.horizon);
  const std::string csv = accumulation_csv(curves);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
    out << "wrote deviation curves over " << windows.size() << " windows to " << a.out << "\n";
  }
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Non-autoregressive human motion prediction", "natmotion"};
  app.require_subcommand(1);
  int code = ok;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a labeled synthetic motion dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.spec.classes, "Class count")->capture_default_str();
  gen_cmd->add_option("--joints", gen.spec.joints, "Joints of the skeleton")->capture_default_str();
  gen_cmd->add_option("--seqs-per-class", gen.spec.seqs_per_class, "Sequences per class")->capture_default_str();
  gen_cmd->add_option("--frames", gen.spec.frames, "Frames per sequence")->capture_default_str();
  gen_cmd->add_option("--fps", gen.spec.fps, "Frame rate")->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise, "Axis-angle noise std-dev (rad)")->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Sequence seed")->capture_default_str();
  gen_cmd->add_option("--class-seed", gen.spec.class_seed, "Seed of the class definitions")->capture_default_str();
  gen_cmd->callback([&] { code = gen_synthetic(gen, out); });

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a NAT (or AR baseline) model");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--iters", tr.cfg.iterations, "Iterations")->capture_default_str();
  train_cmd->add_option("--batch", tr.cfg.batch, "Minibatch size")->capture_default_str();
  train_cmd->add_option("--lr", tr.cfg.lr, "Base learning rate")->capture_default_str();
  train_cmd->add_option("--decay", tr.cfg.decay, "Learning-rate decay per epoch")->capture_default_str();
  train_cmd->add_option("--clip", tr.cfg.clip, "Gradient clip norm")->capture_default_str();
  train_cmd->add_option("--lambda-pnlty", tr.cfg.lambda_pnlty, "Quaternion norm penalty weight")->capture_default_str();
  train_cmd->add_option("--lambda-cls", tr.cfg.lambda_cls, "Classification loss weight")->capture_default_str();
  train_cmd->add_option("--alpha", tr.cfg.alpha, "Positional-encoding scale")->capture_default_str();
  train_cmd->add_option("--beta", tr.cfg.beta, "Positional-encoding wavelength base")->capture_default_str();
  train_cmd->add_option("--ks", tr.cfg.ks, "Encoder temporal kernel size")->capture_default_str();
  train_cmd->add_option("--graph", tr.graph, "bidirectional|forward|backward|none|random")->capture_default_str();
  train_cmd->add_option("--graph-seed", tr.cfg.graph.seed, "Seed of the random graph")->capture_default_str();
  train_cmd->add_option("--n", tr.cfg.given, "Observed frames N")->capture_default_str();
  train_cmd->add_option("--m", tr.cfg.horizon, "Predicted frames M")->capture_default_str();
  train_cmd->add_option("--stride", tr.cfg.stride, "Window stride")->capture_default_str();
  train_cmd->add_option("--seed", tr.cfg.seed, "Sampling and dropout seed")->capture_default_str();
  train_cmd->add_option("--init-seed", tr.init_seed, "Initialization seed (defaults to --seed)");
  train_cmd->add_option("--log", tr.log, "Per-iteration loss CSV");
  train_cmd->add_option("--model", tr.model, "nat|ar")->capture_default_str();
  train_cmd->add_option("--encoder-from", tr.encoder_from, "AR only: copy and freeze the encoder of this checkpoint");
  train_cmd->add_flag("--teacher-forcing", tr.cfg.teacher_forcing, "AR only: train on ground-truth previous frames");
  train_cmd->callback([&] {
    tr.init_seed_set = train_cmd->count("--init-seed") > 0;
    code = train_command(tr, out);
  });

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Predict future frames of one sequence");
  predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  predict_cmd->add_option("--input", pr.input, "SequenceFile; its last N frames are observed")->required();
  predict_cmd->add_option("--m", pr.horizon, "Frames to predict")->capture_default_str();
  predict_cmd->add_option("--out", pr.out, "Output SequenceFile")->required();
  predict_cmd->callback([&] { code = predict_command(pr, out); });

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Mean joint error and recognition accuracy on a dataset");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--horizons", ev.horizons, "Comma-separated horizons in ms")->capture_default_str();
  eval_cmd->add_option("--euler", ev.euler, "Euler order for the metric")->capture_default_str();
  eval_cmd->add_option("--stride", ev.stride, "Window stride")->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "Report path (stdout when omitted)");
  eval_cmd->callback([&] { code = eval_command(ev, out); });

  PosencArgs pe;
  pe.cfg.horizon = 25;
  auto* posenc_cmd = app.add_subcommand("posenc", "Dump the positional-encoding table as CSV");
  posenc_cmd->add_option("--alpha", pe.cfg.alpha, "Scale factor")->capture_default_str();
  posenc_cmd->add_option("--beta", pe.cfg.beta, "Wavelength base")->capture_default_str();
  posenc_cmd->add_option("--dmodel", pe.cfg.d_model, "Embedding width")->capture_default_str();
  posenc_cmd->add_option("--len", pe.cfg.horizon, "Rows (frames 1..len)")->capture_default_str();
  posenc_cmd->add_option("--out", pe.out, "CSV path (stdout when omitted)");
  posenc_cmd->callback([&] { code = posenc_command(pe, out); });

  LabArgs lab;
  auto* lab_cmd = app.add_subcommand("lab", "Experiments");
  lab_cmd->require_subcommand(1);
  auto* accum_cmd = lab_cmd->add_subcommand("error-accum", "Perturbation propagation in NAT vs AR decoding");
  accum_cmd->add_option("--nat", lab.nat, "NAT checkpoint")->required();
  accum_cmd->add_option("--ar", lab.ar, "AR checkpoint")->required();
  accum_cmd->add_option("--data", lab.data, "Dataset directory")->required();
  accum_cmd->add_option("--delta", lab.delta, "Perturbation added to the first frame")->capture_default_str();
  accum_cmd->add_option("--m", lab.horizon, "Frames to decode")->capture_default_str();
  accum_cmd->add_option("--stride", lab.stride, "Window stride")->capture_default_str();
  accum_cmd->add_option("--out", lab.out, "CSV path (stdout when omitted)");
  accum_cmd->callback([&] { code = lab_error_accum(lab, out); });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return data;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return numeric;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return data;
  }
  return code;
}

}  // namespace natmotion::cli
