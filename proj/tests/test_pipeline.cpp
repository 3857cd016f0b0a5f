#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "prosolabel/pipeline.hpp"
#include "test_util.hpp"

namespace prosolabel {
namespace {

Errc config_error(const nlohmann::json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "accepted " << j.dump();
  return Errc::Io;
}

TEST(RunConfig, ParsesAndResolvesRelativePaths) {
  const auto j = nlohmann::json::parse(R"({
    "version": 1,
    "manifests": {"train": "data/train.jsonl", "dev": "/abs/dev.jsonl"},
    "streams": {"acoustic": "hubert", "linguistic": "one-hot"},
    "model": {"hidden": 64, "activation": "tanh"},
    "train": {"lr": 0.001, "max_steps": 10},
    "out": "runs/a",
    "seed": 42
  })");
  const auto cfg = RunConfig::from_json(j, "/base");
  EXPECT_EQ(cfg.train_manifest, fs::path("/base/data/train.jsonl"));
  EXPECT_EQ(cfg.dev_manifest, fs::path("/abs/dev.jsonl"));
  EXPECT_TRUE(cfg.eval_manifest.empty());
  EXPECT_EQ(cfg.streams, (StreamConfig{"hubert", "one-hot"}));
  EXPECT_EQ(cfg.model.hidden, 64);
  EXPECT_EQ(cfg.model.conv_layers, 6);
  EXPECT_EQ(cfg.model.activation, Activation::Tanh);
  EXPECT_EQ(cfg.train.adam.lr, 0.001);
  EXPECT_EQ(cfg.train.batch_size, 4u);
  EXPECT_EQ(cfg.out, fs::path("/base/runs/a"));
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.train.seed, 42u);
}

TEST(RunConfig, RoundTripsThroughJson) {
  RunConfig cfg;
  cfg.train_manifest = "t.jsonl";
  cfg.streams = {"melspec", "none"};
  cfg.grid = grid_cells({"melspec", "none"}, {"one-hot", "none"});
  cfg.seed = 9;
  cfg.train.seed = 9;
  cfg.model.kernel = 3;
  const auto back = RunConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
}

TEST(RunConfig, RejectsBadConfigs) {
  EXPECT_EQ(config_error({{"speed", 1}}), Errc::InvalidConfig);
  EXPECT_EQ(config_error({{"version", 2}}), Errc::InvalidConfig);
  EXPECT_EQ(config_error({{"model", {{"activation", "gelu"}}}}), Errc::InvalidConfig);
  EXPECT_EQ(config_error({{"seed", "x"}}), Errc::InvalidConfig);
  EXPECT_EQ(config_error(nlohmann::json::array()), Errc::InvalidConfig);
  try {
    RunConfig::load("/nonexistent/config.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidConfig);
  }
}

TEST(Grid, CellsSkipNoneByNone) {
  const auto cells = grid_cells({"melspec", "none"}, {"one-hot", "none"});
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0], (StreamConfig{"melspec", "one-hot"}));
  EXPECT_EQ(cells[1], (StreamConfig{"melspec", "none"}));
  EXPECT_EQ(cells[2], (StreamConfig{"none", "one-hot"}));
  EXPECT_EQ(stream_label(cells[1]), "melspec+none");
  EXPECT_TRUE(grid_cells({"none"}, {"none"}).empty());
}

TEST(Paths, RebaseKeepsReferencesValid) {
  Utterance utt = testing::make_utterance("u", {"a"});
  utt.audio = "wav/u.wav";
  utt.features["x"] = "features/u.pfe";
  utt.features["abs"] = "/data/u.pfe";
  rebase_refs(utt, "/w/corpus", "/w/out/run");
  EXPECT_EQ(*utt.audio, "../../corpus/wav/u.wav");
  EXPECT_EQ(utt.features["x"], "../../corpus/features/u.pfe");
  EXPECT_EQ(utt.features["abs"], "/data/u.pfe");
}

TEST(RunRecord, TracksStatus) {
  const auto dir = testing::scratch_dir("record");
  RunRecord rec(dir, "train", {{"seed", 1}});
  rec.write();
  auto read = [&] {
    std::ifstream in(dir / "run.json");
    return nlohmann::json::parse(in);
  };
  EXPECT_EQ(read()["status"], "running");
  rec.failed("boom");
  EXPECT_EQ(read()["status"], "failed");
  EXPECT_EQ(read()["error"], "boom");
  EXPECT_EQ(read()["version"], std::string(kToolVersion));
}

// synth -> train -> annotate -> score on a tiny corpus.
class PipelineFlow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(testing::scratch_dir("flow"));
    SynthRequest req;
    req.train = 6;
    req.dev = 2;
    req.eval = 3;
    req.plant.audio = true;
    execute_synth(req, 5, *dir_ / "corpus");
  }
  static void TearDownTestSuite() { delete dir_; }

  static RunConfig small_run() {
    RunConfig cfg = RunConfig::load(*dir_ / "corpus" / "config.json");
    cfg.model.hidden = 16;
    cfg.model.conv_layers = 2;
    cfg.train.max_steps = 20;
    cfg.train.eval_interval = 10;
    cfg.train.adam.lr = 1e-3;
    return cfg;
  }

  static fs::path* dir_;
};

fs::path* PipelineFlow::dir_ = nullptr;

TEST_F(PipelineFlow, SynthWritesSplitsAndConfig) {
  const auto corpus = *dir_ / "corpus";
  EXPECT_EQ(parse_manifest(corpus / "train.jsonl").size(), 6u);
  EXPECT_EQ(parse_manifest(corpus / "dev.jsonl").size(), 2u);
  EXPECT_EQ(parse_manifest(corpus / "eval.jsonl").size(), 3u);
  EXPECT_EQ(parse_manifest(corpus / "all.jsonl").size(), 11u);
  const auto cfg = RunConfig::load(corpus / "config.json");
  EXPECT_EQ(cfg.streams, synth_streams());
  EXPECT_EQ(cfg.train_manifest, corpus / "train.jsonl");
  EXPECT_EQ(cfg.seed, 5u);
}

TEST_F(PipelineFlow, TrainAnnotateScore) {
  const auto out = *dir_ / "run";
  const auto plan = prepare_train(small_run());
  EXPECT_EQ(plan.model.acoustic_layers, SynthPlant{}.acoustic_layers);
  const auto trained = execute_train(plan, out);
  for (const char* name : {"checkpoint.pck", "last.pck", "loss.csv", "dev.csv"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }
  std::ifstream loss(out / "loss.csv");
  std::string header;
  std::getline(loss, header);
  EXPECT_EQ(header, "step,total,acc,hl,bi,pau");

  auto annotate_plan = prepare_annotate(out / "checkpoint.pck", *dir_ / "corpus" / "eval.jsonl");
  const auto hyp_path = execute_annotate(annotate_plan, out / "annotate");
  const auto hyp = parse_manifest(hyp_path);
  ASSERT_EQ(hyp.size(), 3u);
  // references still resolve from the new location
  for (const auto& utt : hyp) {
    EXPECT_TRUE(fs::exists(resolve_path(hyp_path.parent_path(), utt.features.at("synth-acoustic"))));
    EXPECT_TRUE(utt.labels.has_value());
  }

  const auto score_plan = prepare_score(*dir_ / "corpus" / "eval.jsonl", hyp_path, {});
  const auto report = execute_score(score_plan, out / "score");
  EXPECT_TRUE(fs::exists(out / "score" / "scores.json"));
  EXPECT_GT(report.tasks[0].total, 0u);
  std::ostringstream table;
  print_scores(report, table);
  EXPECT_NE(table.str().find("pau"), std::string::npos);
}

TEST_F(PipelineFlow, AnnotateUsesCheckpointStreams) {
  const auto out = *dir_ / "run_one_hot";
  RunConfig cfg = small_run();
  cfg.streams = {"none", "one-hot"};
  cfg.train.max_steps = 1;
  execute_train(prepare_train(cfg), out);
  // the checkpoint, not the manifest, decides which streams are read
  EXPECT_NO_THROW(prepare_annotate(out / "checkpoint.pck", *dir_ / "corpus" / "eval.jsonl"));
  EXPECT_THROW(prepare_annotate(out / "missing.pck", *dir_ / "corpus" / "eval.jsonl"), Error);
}

TEST_F(PipelineFlow, TrainValidatesBeforeRunning) {
  RunConfig cfg = small_run();
  cfg.train_manifest = *dir_ / "nope.jsonl";
  EXPECT_THROW(prepare_train(cfg), Error);
  cfg = small_run();
  cfg.streams = {"hubert", "none"};
  try {
    prepare_train(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingStream);
  }
}

TEST_F(PipelineFlow, ExtractFollowsTheFrameGrid) {
  const auto out = *dir_ / "extract";
  const auto plan = prepare_extract(*dir_ / "corpus" / "eval.jsonl", {"melspec", "f0"}, {});
  const auto outcome = execute_extract(plan, out);
  EXPECT_TRUE(outcome.failures.empty());
  const auto utts = parse_manifest(outcome.manifest);
  ASSERT_EQ(utts.size(), 3u);
  for (const auto& utt : utts) {
    const auto mel = read_features(resolve_path(out, utt.features.at("melspec")));
    const auto f0 = read_features(resolve_path(out, utt.features.at("f0")));
    EXPECT_EQ(mel.steps(), static_cast<std::size_t>(utt.total_frames()));
    EXPECT_EQ(f0.steps(), mel.steps());
    EXPECT_EQ(mel.dim(), 80u);
    // the synth streams are kept alongside
    EXPECT_TRUE(fs::exists(resolve_path(out, utt.features.at("synth-acoustic"))));
  }
  EXPECT_THROW(prepare_extract(*dir_ / "corpus" / "eval.jsonl", {"hubert"}, {}), Error);
}

TEST_F(PipelineFlow, GridWritesSummary) {
  RunConfig cfg = small_run();
  cfg.train.max_steps = 2;
  cfg.grid = grid_cells({"synth-acoustic", "none"}, {"synth-linguistic", "none"});
  auto plan = prepare_grid(cfg);
  const auto out = *dir_ / "grid";
  const auto rows = execute_grid(plan, out);
  ASSERT_EQ(rows.size(), 3u);
  std::ifstream in(out / "summary.csv");
  std::string line;
  int n = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "acoustic,linguistic,acc,hl,bi,pau,f1_acc,f1_hl,f1_bi,f1_pau");
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 3);
  EXPECT_TRUE(fs::exists(out / "none+synth-linguistic" / "checkpoint.pck"));
}

}  // namespace
}  // namespace prosolabel
