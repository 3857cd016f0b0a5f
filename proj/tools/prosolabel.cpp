// prosolabel: extract, train, annotate, score, weights, synth, grid.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prosolabel/prosolabel.hpp"

namespace fs = std::filesystem;
using namespace prosolabel;

namespace {

constexpr int kValidationError = 1;
constexpr int kRuntimeFailure = 2;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run config (JSON)");
  c.seed_opt = cmd->add_option("--seed", c.seed, "Seed (overrides config)");
  c.out_opt = cmd->add_option("--out", c.out, "Output directory (overrides config)");
}

// Training flags shared by train and grid.
struct TrainFlags {
  std::string train, dev, eval, acoustic, linguistic, activation;
  std::uint64_t max_steps = 0, eval_interval = 0, patience = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  int hidden = 0, conv_layers = 0, kernel = 0;
  std::vector<CLI::Option*> opts;
  CLI::Option *o_train{}, *o_dev{}, *o_eval{}, *o_aco{}, *o_ling{}, *o_steps{}, *o_interval{},
      *o_patience{}, *o_batch{}, *o_lr{}, *o_hidden{}, *o_conv{}, *o_kernel{}, *o_act{};
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool streams) {
  f.o_train = cmd->add_option("--train", f.train, "Training manifest");
  f.o_dev = cmd->add_option("--dev", f.dev, "Development manifest");
  f.o_eval = cmd->add_option("--eval", f.eval, "Evaluation manifest");
  if (streams) {
    f.o_aco = cmd->add_option("--acoustic", f.acoustic, "Acoustic stream (or none)");
    f.o_ling = cmd->add_option("--linguistic", f.linguistic, "Linguistic stream (one-hot, none, ...)");
  }
  f.o_steps = cmd->add_option("--max-steps", f.max_steps, "Optimizer steps");
  f.o_interval = cmd->add_option("--eval-interval", f.eval_interval, "Steps between dev evaluations");
  f.o_patience = cmd->add_option("--patience", f.patience, "Dev evaluations without improvement before stopping");
  f.o_batch = cmd->add_option("--batch-size", f.batch_size, "Utterances per batch");
  f.o_lr = cmd->add_option("--lr", f.lr, "Adam learning rate");
  f.o_hidden = cmd->add_option("--hidden", f.hidden, "Conv channels");
  f.o_conv = cmd->add_option("--conv-layers", f.conv_layers, "Conv layers");
  f.o_kernel = cmd->add_option("--kernel", f.kernel, "Conv kernel width");
  f.o_act = cmd->add_option("--activation", f.activation, "relu or tanh");
}

RunConfig base_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  if (c.seed_opt->count()) {
    cfg.seed = c.seed;
    cfg.train.seed = c.seed;
  }
  if (c.out_opt->count()) cfg.out = c.out;
  return cfg;
}

void apply(const TrainFlags& f, RunConfig& cfg) {
  if (f.o_train->count()) cfg.train_manifest = f.train;
  if (f.o_dev->count()) cfg.dev_manifest = f.dev;
  if (f.o_eval->count()) cfg.eval_manifest = f.eval;
  if (f.o_aco && f.o_aco->count()) cfg.streams.acoustic = f.acoustic;
  if (f.o_ling && f.o_ling->count()) cfg.streams.linguistic = f.linguistic;
  if (f.o_steps->count()) cfg.train.max_steps = f.max_steps;
  if (f.o_interval->count()) cfg.train.eval_interval = f.eval_interval;
  if (f.o_patience->count()) cfg.train.patience = f.patience;
  if (f.o_batch->count()) cfg.train.batch_size = f.batch_size;
  if (f.o_lr->count()) cfg.train.adam.lr = f.lr;
  if (f.o_hidden->count()) cfg.model.hidden = f.hidden;
  if (f.o_conv->count()) cfg.model.conv_layers = f.conv_layers;
  if (f.o_kernel->count()) cfg.model.kernel = f.kernel;
  if (f.o_act->count()) cfg.model.activation = parse_activation(f.activation);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(s.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Runs the validation phase, then the compute phase with a run.json record.
int run_phases(const std::string& name, const std::function<void()>& prepare,
               const std::function<fs::path()>& out_dir,
               const std::function<nlohmann::json()>& record_config,
               const std::function<void(RunRecord&)>& execute) {
  try {
    prepare();
  } catch (const Error& e) {
    std::cerr << "prosolabel " << name << ": " << errc_name(e.code()) << ": " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "prosolabel " << name << ": " << e.what() << '\n';
    return kValidationError;
  }
  RunRecord record(out_dir(), name, record_config());
  try {
    record.write();
    execute(record);
    record.complete();
  } catch (const std::exception& e) {
    std::cerr << "prosolabel " << name << ": " << e.what() << '\n';
    try {
      record.failed(e.what());
    } catch (...) {
    }
    return kRuntimeFailure;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prosodic label annotation from fused acoustic and linguistic features"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  // extract
  Common ex_c;
  std::string ex_manifest;
  std::vector<std::string> ex_streams;
  auto* ex = app.add_subcommand("extract", "Compute melspec/f0 feature files from audio");
  add_common(ex, ex_c);
  ex->add_option("--manifest", ex_manifest, "Input manifest with audio paths")->required();
  ex->add_option("--stream", ex_streams, "melspec and/or f0")->required();

  // train
  Common tr_c;
  TrainFlags tr_f;
  auto* tr = app.add_subcommand("train", "Train the annotation model");
  add_common(tr, tr_c);
  add_train_flags(tr, tr_f, true);

  // annotate
  Common an_c;
  std::string an_ckpt, an_manifest;
  auto* an = app.add_subcommand("annotate", "Predict labels with a checkpoint");
  add_common(an, an_c);
  an->add_option("--checkpoint", an_ckpt, "Checkpoint file")->required();
  an->add_option("--manifest", an_manifest, "Manifest to annotate")->required();

  // score
  Common sc_c;
  std::string sc_ref, sc_hyp;
  bool sc_exclude_absent = false;
  auto* sc = app.add_subcommand("score", "Score a hypothesis manifest against a reference");
  add_common(sc, sc_c);
  sc->add_option("--ref", sc_ref, "Reference manifest")->required();
  sc->add_option("--hyp", sc_hyp, "Hypothesis manifest")->required();
  sc->add_flag("--exclude-absent-classes", sc_exclude_absent,
               "Leave classes absent from both ref and hyp out of macro F1");

  // weights
  Common wt_c;
  std::string wt_ckpt;
  auto* wt = app.add_subcommand("weights", "Report normalized layer weights of a checkpoint");
  add_common(wt, wt_c);
  wt->add_option("--checkpoint", wt_ckpt, "Checkpoint file")->required();

  // synth
  Common sy_c;
  SynthRequest sy_req;
  auto* sy = app.add_subcommand("synth", "Write a seeded synthetic corpus");
  add_common(sy, sy_c);
  sy->add_option("--train-utts", sy_req.train, "Training utterances")->capture_default_str();
  sy->add_option("--dev-utts", sy_req.dev, "Development utterances")->capture_default_str();
  sy->add_option("--eval-utts", sy_req.eval, "Evaluation utterances")->capture_default_str();
  sy->add_option("--noise", sy_req.plant.noise, "Noise std on planted layers")->capture_default_str();
  sy->add_option("--distractor", sy_req.plant.distractor, "Std of unplanted layers")->capture_default_str();
  sy->add_flag("--audio", sy_req.plant.audio, "Also write 16 kHz audio");

  // grid
  Common gr_c;
  TrainFlags gr_f;
  std::string gr_aco = "melspec,none", gr_ling = "one-hot,none";
  auto* gr = app.add_subcommand("grid", "Train and score every acoustic x linguistic combination");
  add_common(gr, gr_c);
  add_train_flags(gr, gr_f, false);
  auto* gr_aco_opt = gr->add_option("--acoustic", gr_aco, "Comma-separated acoustic streams")->capture_default_str();
  auto* gr_ling_opt = gr->add_option("--linguistic", gr_ling, "Comma-separated linguistic streams")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidationError;
  }

  if (ex->parsed()) {
    ExtractPlan plan;
    RunConfig cfg;
    return run_phases(
        "extract",
        [&] {
          cfg = base_config(ex_c);
          plan = prepare_extract(ex_manifest, ex_streams, cfg.extract);
        },
        [&] { return cfg.out; },
        [&] {
          auto j = cfg.to_json();
          j["manifest"] = ex_manifest;
          j["streams"] = ex_streams;
          return j;
        },
        [&](RunRecord& rec) {
          const auto outcome = execute_extract(plan, cfg.out);
          rec.json()["manifest"] = outcome.manifest.string();
          rec.json()["failures"] = outcome.failures;
          for (const auto& f : outcome.failures) std::cerr << "failed: " << f << '\n';
          if (!outcome.failures.empty()) {
            fail(Errc::Io, std::to_string(outcome.failures.size()) + " utterance(s) failed");
          }
          std::cout << outcome.manifest.string() << '\n';
        });
  }

  if (tr->parsed()) {
    TrainPlan plan;
    RunConfig cfg;
    return run_phases(
        "train",
        [&] {
          cfg = base_config(tr_c);
          apply(tr_f, cfg);
          plan = prepare_train(cfg);
        },
        [&] { return cfg.out; },
        [&] { return cfg.to_json(); },
        [&](RunRecord& rec) {
          const auto outcome = execute_train(plan, cfg.out, &std::cerr);
          const auto& r = outcome.result;
          rec.json()["result"] = {{"checkpoint", outcome.checkpoint.string()},
                                  {"best_step", r.best.step},
                                  {"last_step", r.last.step},
                                  {"stopped_early", r.stopped_early},
                                  {"best_dev_mean_accuracy",
                                   r.dev.empty() ? nlohmann::json(nullptr)
                                                 : nlohmann::json(std::max_element(
                                                       r.dev.begin(), r.dev.end(),
                                                       [](const auto& a, const auto& b) {
                                                         return a.mean_accuracy < b.mean_accuracy;
                                                       })->mean_accuracy)}};
          std::cout << outcome.checkpoint.string() << '\n';
        });
  }

  if (an->parsed()) {
    AnnotatePlan plan;
    RunConfig cfg;
    return run_phases(
        "annotate",
        [&] {
          cfg = base_config(an_c);
          plan = prepare_annotate(an_ckpt, an_manifest);
        },
        [&] { return cfg.out; },
        [&] {
          return nlohmann::json{{"checkpoint", an_ckpt}, {"manifest", an_manifest},
                                {"out", cfg.out.string()}};
        },
        [&](RunRecord& rec) {
          const auto path = execute_annotate(plan, cfg.out);
          rec.json()["hypothesis"] = path.string();
          std::cout << path.string() << '\n';
        });
  }

  if (sc->parsed()) {
    ScorePlan plan;
    RunConfig cfg;
    return run_phases(
        "score",
        [&] {
          cfg = base_config(sc_c);
          ScoreOptions opt;
          opt.include_absent_classes = !sc_exclude_absent;
          plan = prepare_score(sc_ref, sc_hyp, opt);
        },
        [&] { return cfg.out; },
        [&] {
          return nlohmann::json{{"ref", sc_ref}, {"hyp", sc_hyp},
                                {"include_absent_classes", !sc_exclude_absent},
                                {"out", cfg.out.string()}};
        },
        [&](RunRecord& rec) {
          const auto report = execute_score(plan, cfg.out);
          rec.json()["scores"] = to_json(report);
          print_scores(report, std::cout);
        });
  }

  if (wt->parsed()) {
    Checkpoint ckpt;
    RunConfig cfg;
    return run_phases(
        "weights",
        [&] {
          cfg = base_config(wt_c);
          if (!fs::exists(wt_ckpt)) fail(Errc::InvalidConfig, "checkpoint " + wt_ckpt + " not found");
          ckpt = load_checkpoint(wt_ckpt);
        },
        [&] { return cfg.out; },
        [&] { return nlohmann::json{{"checkpoint", wt_ckpt}, {"out", cfg.out.string()}}; },
        [&](RunRecord& rec) {
          const auto weights = report_layer_weights(ckpt);
          write_layer_weights(weights, cfg.out);
          rec.json()["weights"] = weights;
          for (const auto& [side, w] : weights) {
            const std::string& stream = side == "acoustic" ? ckpt.streams.acoustic : ckpt.streams.linguistic;
            std::cout << side << " (" << stream << ")\n";
            for (std::size_t l = 0; l < w.size(); ++l) {
              std::cout << "  layer " << l << "  " << std::fixed << std::setprecision(4) << w[l]
                        << std::defaultfloat << '\n';
            }
          }
        });
  }

  if (sy->parsed()) {
    RunConfig cfg;
    return run_phases(
        "synth",
        [&] {
          cfg = base_config(sy_c);
          sy_req.plant.validate();
          if (sy_req.train + sy_req.dev + sy_req.eval == 0) {
            fail(Errc::InvalidConfig, "synth needs at least one utterance");
          }
        },
        [&] { return cfg.out; },
        [&] {
          return nlohmann::json{{"seed", cfg.seed},
                                {"train_utts", sy_req.train},
                                {"dev_utts", sy_req.dev},
                                {"eval_utts", sy_req.eval},
                                {"plant", sy_req.plant.to_json()}};
        },
        [&](RunRecord&) {
          execute_synth(sy_req, cfg.seed, cfg.out);
          std::cout << (cfg.out / "config.json").string() << '\n';
        });
  }

  if (gr->parsed()) {
    GridPlan plan;
    RunConfig cfg;
    return run_phases(
        "grid",
        [&] {
          cfg = base_config(gr_c);
          apply(gr_f, cfg);
          if (cfg.grid.empty() || gr_aco_opt->count() || gr_ling_opt->count()) {
            cfg.grid = grid_cells(split_list(gr_aco), split_list(gr_ling));
          }
          plan = prepare_grid(cfg);
        },
        [&] { return cfg.out; },
        [&] { return cfg.to_json(); },
        [&](RunRecord& rec) {
          const auto rows = execute_grid(plan, cfg.out, &std::cerr);
          rec.json()["summary"] = (cfg.out / "summary.csv").string();
          std::cout << "acoustic       linguistic     acc     hl      bi      pau\n";
          for (const auto& row : rows) {
            std::cout << std::left << std::setw(15) << row.streams.acoustic << std::setw(15)
                      << row.streams.linguistic << std::right << std::fixed << std::setprecision(3);
            for (const auto& t : row.report.tasks) std::cout << std::setw(8) << t.accuracy;
            std::cout << std::defaultfloat << '\n';
          }
        });
  }
  return kValidationError;
}
