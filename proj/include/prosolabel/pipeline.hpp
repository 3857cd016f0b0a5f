#pragma once

// Run configuration and the command bodies behind the CLI.
//
// Each command is split into prepare_* (config, manifest and feature checks,
// no training or extraction) and execute_*. The CLI maps errors from the
// first phase to exit code 1 and from the second to exit code 2.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosolabel/corpus.hpp"
#include "prosolabel/dsp.hpp"
#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/manifest.hpp"
#include "prosolabel/metrics.hpp"
#include "prosolabel/model.hpp"
#include "prosolabel/synth.hpp"
#include "prosolabel/train.hpp"
#include "prosolabel/wav.hpp"

namespace prosolabel {

namespace fs = std::filesystem;

inline constexpr int kRunConfigVersion = 1;
inline constexpr std::string_view kToolVersion = "0.1.0";

struct ExtractConfig {
  MelOptions mel;
  double f0_floor = 70.0;
  double f0_ceil = 400.0;
};

struct RunConfig {
  fs::path train_manifest;
  fs::path dev_manifest;
  fs::path eval_manifest;
  StreamConfig streams;
  ModelConfig model;  // stream shapes are filled in from the data
  TrainConfig train;
  ExtractConfig extract;
  std::vector<StreamConfig> grid;
  fs::path out = "run";
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json model_json = {{"hidden", model.hidden},
                                 {"conv_layers", model.conv_layers},
                                 {"kernel", model.kernel},
                                 {"activation", activation_name(model.activation)},
                                 {"task_weights", model.task_weights}};
    nlohmann::json grid_json = nlohmann::json::array();
    for (const auto& g : grid) grid_json.push_back({{"acoustic", g.acoustic}, {"linguistic", g.linguistic}});
    return {{"version", kRunConfigVersion},
            {"manifests",
             {{"train", train_manifest.string()},
              {"dev", dev_manifest.string()},
              {"eval", eval_manifest.string()}}},
            {"streams", {{"acoustic", streams.acoustic}, {"linguistic", streams.linguistic}}},
            {"model", model_json},
            {"train", train.to_json()},
            {"extract",
             {{"n_mels", extract.mel.n_mels},
              {"fmin", extract.mel.fmin},
              {"fmax", extract.mel.fmax},
              {"f0_floor", extract.f0_floor},
              {"f0_ceil", extract.f0_ceil}}},
            {"grid", grid_json},
            {"out", out.string()},
            {"seed", seed}};
  }

  // Relative manifest and output paths in a config file are taken relative
  // to the file's directory.
  static RunConfig from_json(const nlohmann::json& j, const fs::path& base = {}) {
    static const std::set<std::string> keys{"version", "manifests", "streams", "model", "train",
                                            "extract", "grid", "out", "seed"};
    if (!j.is_object()) fail(Errc::InvalidConfig, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!keys.count(key)) fail(Errc::InvalidConfig, "unknown config key '" + key + "'");
    }
    if (j.value("version", kRunConfigVersion) != kRunConfigVersion) {
      fail(Errc::InvalidConfig, "unsupported config version " + j.at("version").dump());
    }
    auto rel = [&](const std::string& p) -> fs::path {
      if (p.empty()) return {};
      fs::path path(p);
      return path.is_absolute() || base.empty() ? path : base / path;
    };
    RunConfig c;
    try {
      if (j.contains("manifests")) {
        const auto& m = j.at("manifests");
        c.train_manifest = rel(m.value("train", std::string()));
        c.dev_manifest = rel(m.value("dev", std::string()));
        c.eval_manifest = rel(m.value("eval", std::string()));
      }
      if (j.contains("streams")) {
        c.streams.acoustic = j["streams"].value("acoustic", c.streams.acoustic);
        c.streams.linguistic = j["streams"].value("linguistic", c.streams.linguistic);
      }
      if (j.contains("model")) {
        const auto& m = j.at("model");
        c.model.hidden = m.value("hidden", c.model.hidden);
        c.model.conv_layers = m.value("conv_layers", c.model.conv_layers);
        c.model.kernel = m.value("kernel", c.model.kernel);
        c.model.activation = parse_activation(m.value("activation", std::string("relu")));
        if (m.contains("task_weights")) {
          c.model.task_weights = m.at("task_weights").get<std::array<double, 4>>();
        }
      }
      if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
      if (j.contains("extract")) {
        const auto& e = j.at("extract");
        c.extract.mel.n_mels = e.value("n_mels", c.extract.mel.n_mels);
        c.extract.mel.fmin = e.value("fmin", c.extract.mel.fmin);
        c.extract.mel.fmax = e.value("fmax", c.extract.mel.fmax);
        c.extract.f0_floor = e.value("f0_floor", c.extract.f0_floor);
        c.extract.f0_ceil = e.value("f0_ceil", c.extract.f0_ceil);
      }
      if (j.contains("grid")) {
        for (const auto& g : j.at("grid")) {
          c.grid.push_back({g.at("acoustic").get<std::string>(), g.at("linguistic").get<std::string>()});
        }
      }
      if (j.contains("out")) c.out = rel(j.at("out").get<std::string>());
      c.seed = j.value("seed", c.train.seed);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::InvalidConfig, std::string("config: ") + e.what());
    }
    c.train.seed = c.seed;
    return c;
  }

  static RunConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::InvalidConfig, "cannot open config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      fail(Errc::InvalidConfig, path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
  }
};

// ---------------------------------------------------------------------------
// Provenance record

class RunRecord {
 public:
  RunRecord(fs::path out, std::string command, nlohmann::json config)
      : out_(std::move(out)) {
    json_ = {{"tool", "prosolabel"},
             {"version", kToolVersion},
             {"command", std::move(command)},
             {"config", std::move(config)},
             {"status", "running"}};
  }

  nlohmann::json& json() { return json_; }
  const fs::path& out() const { return out_; }

  void write() const {
    fs::create_directories(out_);
    std::ofstream f(out_ / "run.json");
    if (!f) fail(Errc::Io, "cannot write " + (out_ / "run.json").string());
    f << json_.dump(2) << '\n';
  }

  void complete() {
    json_["status"] = "complete";
    write();
  }

  // Leaves whatever was written so far in place and marks it as partial.
  void failed(const std::string& message) {
    json_["status"] = "failed";
    json_["error"] = message;
    write();
  }

 private:
  fs::path out_;
  nlohmann::json json_;
};

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  fs::path manifest;
  std::vector<Utterance> utterances;
  std::vector<Example> examples;
};

inline void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) fail(Errc::InvalidConfig, what + " manifest not set");
  if (!fs::exists(path)) fail(Errc::InvalidConfig, what + " manifest " + path.string() + " not found");
}

inline Dataset load_dataset(const fs::path& manifest, const StreamConfig& streams,
                            bool require_labels) {
  Dataset d;
  d.manifest = manifest;
  d.utterances = parse_manifest(manifest);
  const fs::path dir = manifest.parent_path();
  for (const auto& utt : d.utterances) {
    validate(utt, default_inventory());
    if (require_labels && !utt.labels) fail(Errc::UnlabeledUtterance, "utterance '" + utt.id + "'");
    d.examples.push_back(make_example(utt, streams, load_streams(utt, streams, dir)));
    const auto& first = d.examples.front().streams;
    const auto& cur = d.examples.back().streams;
    if (cur.acoustic_layers() != first.acoustic_layers() || cur.acoustic_dim() != first.acoustic_dim() ||
        cur.linguistic_layers() != first.linguistic_layers() ||
        cur.linguistic_dim() != first.linguistic_dim()) {
      fail(Errc::DimMismatch, "utterance '" + utt.id + "' feature shape differs from '" +
                                  d.examples.front().id + "'");
    }
  }
  if (d.utterances.empty()) fail(Errc::InvalidConfig, "manifest " + manifest.string() + " is empty");
  return d;
}

// Makes relative audio/feature references in `utt` valid from `to_dir`.
inline void rebase_refs(Utterance& utt, const fs::path& from_dir, const fs::path& to_dir) {
  auto rebase = [&](const std::string& ref) {
    fs::path p(ref);
    if (p.is_absolute()) return ref;
    const fs::path abs = fs::absolute(from_dir / p).lexically_normal();
    return abs.lexically_proximate(fs::absolute(to_dir).lexically_normal()).generic_string();
  };
  if (utt.audio) utt.audio = rebase(*utt.audio);
  for (auto& [stream, ref] : utt.features) ref = rebase(ref);
}

inline void check_model_fits(const ModelConfig& model, const Dataset& data) {
  const auto& s = data.examples.front().streams;
  if (s.acoustic_layers() != model.acoustic_layers || s.acoustic_dim() != model.acoustic_dim ||
      s.linguistic_layers() != model.linguistic_layers || s.linguistic_dim() != model.linguistic_dim) {
    fail(Errc::DimMismatch, "features of " + data.manifest.string() +
                                " do not match the checkpoint's stream shapes");
  }
}

inline void write_dev_log(const std::vector<DevRecord>& dev, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  out.precision(17);
  out << "step,mean_accuracy\n";
  for (const auto& r : dev) out << r.step << ',' << r.mean_accuracy << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainPlan {
  RunConfig config;
  Dataset train;
  std::optional<Dataset> dev;
  ModelConfig model;
};

inline TrainPlan prepare_train(const RunConfig& cfg) {
  cfg.streams.validate();
  cfg.train.validate();
  require_file(cfg.train_manifest, "train");
  if (!cfg.dev_manifest.empty()) require_file(cfg.dev_manifest, "dev");
  TrainPlan plan;
  plan.config = cfg;
  plan.train = load_dataset(cfg.train_manifest, cfg.streams, true);
  if (!cfg.dev_manifest.empty()) plan.dev = load_dataset(cfg.dev_manifest, cfg.streams, true);
  plan.model = model_config_for(plan.train.examples.front(), cfg.model);
  plan.model.validate();
  if (plan.dev) check_model_fits(plan.model, *plan.dev);
  return plan;
}

struct TrainOutcome {
  TrainResult result;
  fs::path checkpoint;
};

inline TrainOutcome execute_train(const TrainPlan& plan, const fs::path& out,
                                  std::ostream* log = nullptr) {
  ProgressFn progress;
  if (log) {
    progress = [log](const LossRecord& loss, const std::optional<DevRecord>& dev) {
      if (!dev) return;
      *log << "step " << loss.step << "  loss " << std::fixed << std::setprecision(4)
           << loss.loss.total << "  dev mean acc " << dev->mean_accuracy << std::defaultfloat
           << '\n';
    };
  }
  static const std::vector<Example> none;
  const std::span<const Example> dev =
      plan.dev ? std::span<const Example>(plan.dev->examples) : std::span<const Example>(none);
  TrainOutcome outcome;
  outcome.result = train(plan.train.examples, dev, plan.model, plan.config.streams,
                         plan.config.train, progress);
  fs::create_directories(out);
  outcome.checkpoint = out / "checkpoint.pck";
  save_checkpoint(outcome.result.best, outcome.checkpoint);
  save_checkpoint(outcome.result.last, out / "last.pck");
  {
    std::ofstream f(out / "loss.csv");
    if (!f) fail(Errc::Io, "cannot write loss.csv");
    write_loss_log(outcome.result.losses, f);
  }
  write_dev_log(outcome.result.dev, out / "dev.csv");
  return outcome;
}

// ---------------------------------------------------------------------------
// annotate

struct AnnotatePlan {
  Checkpoint checkpoint;
  Dataset data;
};

inline AnnotatePlan prepare_annotate(const fs::path& checkpoint, const fs::path& manifest) {
  if (!fs::exists(checkpoint)) fail(Errc::InvalidConfig, "checkpoint " + checkpoint.string() + " not found");
  require_file(manifest, "input");
  AnnotatePlan plan{load_checkpoint(checkpoint), {}};
  plan.data = load_dataset(manifest, plan.checkpoint.streams, false);
  check_model_fits(plan.checkpoint.model.config(), plan.data);
  return plan;
}

inline std::vector<Utterance> annotate_all(AnnotatePlan& plan) {
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < plan.data.examples.size(); ++i) {
    Utterance utt = plan.data.utterances[i];
    utt.labels = annotate(plan.checkpoint.model, plan.data.examples[i]);
    out.push_back(std::move(utt));
  }
  return out;
}

inline fs::path execute_annotate(AnnotatePlan& plan, const fs::path& out) {
  auto hyp = annotate_all(plan);
  for (auto& utt : hyp) rebase_refs(utt, plan.data.manifest.parent_path(), out);
  const fs::path path = out / "hypothesis.jsonl";
  write_manifest(path, hyp);
  return path;
}

// ---------------------------------------------------------------------------
// score

struct ScorePlan {
  std::vector<Utterance> ref;
  std::vector<Utterance> hyp;
  ScoreOptions options;
};

inline ScorePlan prepare_score(const fs::path& ref, const fs::path& hyp, const ScoreOptions& opt) {
  require_file(ref, "reference");
  require_file(hyp, "hypothesis");
  ScorePlan plan{parse_manifest(ref), parse_manifest(hyp), opt};
  for (const auto& utt : plan.ref) validate(utt, default_inventory());
  return plan;
}

inline ScoreReport execute_score(const ScorePlan& plan, const fs::path& out) {
  const ScoreReport report = score(plan.ref, plan.hyp, plan.options);
  write_scores(report, out);
  return report;
}

inline void print_scores(const ScoreReport& report, std::ostream& out) {
  out << "task   accuracy  macro_f1  n\n";
  for (Task task : kTasks) {
    const auto& s = report.tasks[task_index(task)];
    out << std::left << std::setw(6) << task_name(task) << std::right << std::fixed
        << std::setprecision(4) << std::setw(9) << s.accuracy << std::setw(10) << s.macro_f1
        << "  " << s.total << std::defaultfloat << '\n';
  }
}

// ---------------------------------------------------------------------------
// extract

struct ExtractPlan {
  fs::path manifest;
  std::vector<Utterance> utterances;
  std::vector<std::string> streams;
  ExtractConfig config;
};

inline ExtractPlan prepare_extract(const fs::path& manifest, std::vector<std::string> streams,
                                   const ExtractConfig& cfg) {
  require_file(manifest, "input");
  if (streams.empty()) fail(Errc::InvalidConfig, "no stream requested");
  for (const auto& s : streams) {
    if (s != kStreamMelspec && s != kStreamF0) {
      fail(Errc::InvalidConfig, "extract supports melspec and f0, not '" + s + "'");
    }
  }
  if (cfg.mel.n_mels < 1 || !(cfg.f0_floor > 0.0) || !(cfg.f0_ceil > cfg.f0_floor)) {
    fail(Errc::InvalidConfig, "bad extraction settings");
  }
  ExtractPlan plan{manifest, parse_manifest(manifest), std::move(streams), cfg};
  for (const auto& utt : plan.utterances) {
    if (!utt.audio) fail(Errc::InvalidConfig, "utterance '" + utt.id + "' has no audio");
  }
  return plan;
}

struct ExtractOutcome {
  fs::path manifest;
  std::vector<std::string> failures;  // "id: message"
};

inline FeatureTensor extract_stream(const Waveform& wav, const std::string& stream,
                                    const ExtractConfig& cfg) {
  const FrameGrid grid = FrameGrid::canonical(wav.sample_rate);
  if (stream == kStreamMelspec) return melspectrogram(wav, grid, cfg.mel);
  return estimate_f0(wav, grid, cfg.f0_floor, cfg.f0_ceil);
}

inline ExtractOutcome execute_extract(const ExtractPlan& plan, const fs::path& out) {
  ExtractOutcome outcome;
  const fs::path src_dir = plan.manifest.parent_path();
  std::vector<Utterance> updated;
  fs::create_directories(out / "features");
  for (Utterance utt : plan.utterances) {
    try {
      const Waveform wav = read_wav(resolve_path(src_dir, *utt.audio));
      rebase_refs(utt, src_dir, out);
      for (const auto& stream : plan.streams) {
        const std::string ref = "features/" + utt.id + "." + stream + ".pfe";
        write_features(extract_stream(wav, stream, plan.config), out / ref);
        utt.features[stream] = ref;
      }
    } catch (const std::exception& e) {
      outcome.failures.push_back(utt.id + ": " + e.what());
    }
    updated.push_back(std::move(utt));
  }
  outcome.manifest = out / "manifest.jsonl";
  write_manifest(outcome.manifest, updated);
  return outcome;
}

// ---------------------------------------------------------------------------
// synth

struct SynthRequest {
  std::size_t train = 60;
  std::size_t dev = 20;
  std::size_t eval = 20;
  SynthPlant plant;
};

// Writes features, one manifest per split and a config.json that trains on
// the planted streams with a desk-scale schedule.
inline void execute_synth(const SynthRequest& req, std::uint64_t seed, const fs::path& out) {
  const SynthCorpus corpus = synth_corpus(seed, req.train + req.dev + req.eval, req.plant);
  write_synth_corpus(corpus, out, "all.jsonl");
  auto split = [&](std::size_t begin, std::size_t n, const std::string& name) {
    std::vector<Utterance> part(corpus.utterances.begin() + static_cast<std::ptrdiff_t>(begin),
                                corpus.utterances.begin() + static_cast<std::ptrdiff_t>(begin + n));
    write_manifest(out / name, part);
  };
  split(0, req.train, "train.jsonl");
  split(req.train, req.dev, "dev.jsonl");
  split(req.train + req.dev, req.eval, "eval.jsonl");
  RunConfig cfg;
  cfg.train_manifest = "train.jsonl";
  if (req.dev) cfg.dev_manifest = "dev.jsonl";
  if (req.eval) cfg.eval_manifest = "eval.jsonl";
  cfg.streams = synth_streams();
  cfg.seed = seed;
  cfg.train.seed = seed;
  // desk scale: the synthetic corpus is small and learns fast
  cfg.train.adam.lr = 1e-3;
  cfg.train.max_steps = 5000;
  cfg.train.eval_interval = 250;
  cfg.train.patience = 4;
  cfg.out = "run";
  std::ofstream f(out / "config.json");
  if (!f) fail(Errc::Io, "cannot write config.json");
  f << cfg.to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// grid

inline std::string stream_label(const StreamConfig& s) { return s.acoustic + "+" + s.linguistic; }

// Cross product of the two lists without the none x none cell.
inline std::vector<StreamConfig> grid_cells(const std::vector<std::string>& acoustic,
                                            const std::vector<std::string>& linguistic) {
  std::vector<StreamConfig> cells;
  for (const auto& a : acoustic) {
    for (const auto& l : linguistic) {
      if (a == kStreamNone && l == kStreamNone) continue;
      cells.push_back({a, l});
    }
  }
  return cells;
}

struct GridPlan {
  RunConfig config;
  std::vector<TrainPlan> cells;
  std::vector<Dataset> eval;
};

inline GridPlan prepare_grid(const RunConfig& cfg) {
  if (cfg.grid.empty()) fail(Errc::InvalidConfig, "grid has no stream combinations");
  const fs::path eval = !cfg.eval_manifest.empty() ? cfg.eval_manifest : cfg.dev_manifest;
  require_file(eval, "eval");
  GridPlan plan;
  plan.config = cfg;
  for (const auto& cell : cfg.grid) {
    RunConfig c = cfg;
    c.streams = cell;
    plan.cells.push_back(prepare_train(c));
    plan.eval.push_back(load_dataset(eval, cell, true));
    check_model_fits(plan.cells.back().model, plan.eval.back());
  }
  return plan;
}

struct GridRow {
  StreamConfig streams;
  ScoreReport report;
};

inline std::vector<GridRow> execute_grid(GridPlan& plan, const fs::path& out,
                                         std::ostream* log = nullptr) {
  std::vector<GridRow> rows;
  for (std::size_t i = 0; i < plan.cells.size(); ++i) {
    const auto& cell = plan.cells[i];
    const fs::path dir = out / stream_label(cell.config.streams);
    if (log) *log << "[" << stream_label(cell.config.streams) << "]\n";
    TrainOutcome trained = execute_train(cell, dir, log);
    AnnotatePlan annotate_plan{trained.result.best, plan.eval[i]};
    const auto hyp = annotate_all(annotate_plan);
    const ScoreReport report = score(plan.eval[i].utterances, hyp);
    write_scores(report, dir);
    rows.push_back({cell.config.streams, report});
  }
  std::ofstream f(out / "summary.csv");
  if (!f) fail(Errc::Io, "cannot write summary.csv");
  f << "acoustic,linguistic,acc,hl,bi,pau,f1_acc,f1_hl,f1_bi,f1_pau\n";
  f.precision(6);
  for (const auto& row : rows) {
    f << row.streams.acoustic << ',' << row.streams.linguistic;
    for (const auto& t : row.report.tasks) f << ',' << t.accuracy;
    for (const auto& t : row.report.tasks) f << ',' << t.macro_f1;
    f << '\n';
  }
  return rows;
}

}  // namespace prosolabel
