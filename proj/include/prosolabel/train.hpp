#pragma once

// Training loop, checkpoints and inference for the annotation model.
//
// Minibatches are built by walking a seeded shuffle of the training set; each
// utterance gets its own forward/backward pass and gradients are averaged over
// the batch before one Adam step. Extractor features are constants, so only
// the fusion logits and the network parameters move.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosolabel/corpus.hpp"
#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/model.hpp"
#include "prosolabel/random.hpp"

namespace prosolabel {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 4;
  std::uint64_t max_steps = 100000;
  std::uint64_t seed = 0;
  std::uint64_t eval_interval = 1000;  // 0: evaluate dev only at the end
  std::uint64_t patience = 0;          // dev evaluations without improvement; 0: never stop early

  void validate() const {
    if (!(adam.lr > 0.0)) fail(Errc::InvalidConfig, "lr must be positive");
    if (batch_size < 1) fail(Errc::InvalidConfig, "batch_size must be at least 1");
  }

  nlohmann::json to_json() const {
    return {{"lr", adam.lr},           {"beta1", adam.beta1},
            {"beta2", adam.beta2},     {"eps", adam.eps},
            {"batch_size", batch_size}, {"max_steps", max_steps},
            {"seed", seed},            {"eval_interval", eval_interval},
            {"patience", patience}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("eps", c.adam.eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.patience = j.value("patience", c.patience);
    return c;
  }
};

// One utterance ready for the network: phoneme-axis streams, loss targets and
// the mora-core mask.
struct Example {
  std::string id;
  PhonemeStreams streams;
  Targets targets;
  std::vector<bool> mask;

  std::size_t phonemes() const { return mask.size(); }
};

inline Example make_example(const Utterance& utt, const StreamConfig& cfg,
                            const StreamTensors& tensors,
                            const PhonemeInventory& inventory = default_inventory()) {
  if (utt.phonemes.empty()) fail(Errc::PhonemeCountMismatch, utt.id + ": no phonemes");
  Example ex;
  ex.id = utt.id;
  ex.streams = prepare_streams(utt, cfg, tensors, inventory);
  ex.mask = utt.mora_mask();
  if (utt.labels) {
    ex.targets = make_targets(*utt.labels, ex.mask);
  } else {
    for (auto& t : ex.targets) t.assign(ex.mask.size(), -1);
  }
  return ex;
}

inline ModelConfig model_config_for(const Example& ex, ModelConfig base = {}) {
  base.acoustic_layers = ex.streams.acoustic_layers();
  base.acoustic_dim = ex.streams.acoustic_dim();
  base.linguistic_layers = ex.streams.linguistic_layers();
  base.linguistic_dim = ex.streams.linguistic_dim();
  return base;
}

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint {
  StreamConfig streams;
  TrainConfig train;
  AnnotatorModel model;
  AdamState optimizer;
  std::uint64_t step = 0;

  nlohmann::json config_json() const {
    return {{"model", model.config().to_json()},
            {"streams", {{"acoustic", streams.acoustic}, {"linguistic", streams.linguistic}}},
            {"train", train.to_json()}};
  }

  std::uint64_t config_hash() const { return fnv1a(config_json().dump()); }
};

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'P', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_blob(std::ostream& out, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put<double>(out, m.data()[i]);
}

inline Matrix get_blob(std::istream& in, const std::string& expected) {
  std::uint32_t len = 0, rows = 0, cols = 0;
  if (!get(in, len)) fail(Errc::HeaderShapeMismatch, "checkpoint truncated before blob");
  std::string name(len, '\0');
  if (!in.read(name.data(), len) || name != expected) {
    fail(Errc::HeaderShapeMismatch, "expected blob '" + expected + "', found '" + name + "'");
  }
  if (!get(in, rows) || !get(in, cols)) fail(Errc::HeaderShapeMismatch, "blob header truncated");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!get(in, m.data()[i])) fail(Errc::HeaderShapeMismatch, "blob '" + name + "' truncated");
  }
  return m;
}

}  // namespace detail

// Layout: "PCK1" | u32 version | u32 n | n bytes of JSON header | blobs.
// Each blob is u32 name length, name, u32 rows, u32 cols, rows*cols float64.
// Blob order: every parameter, then "adam.m.<name>", then "adam.v.<name>".
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  nlohmann::json header = ckpt.config_json();
  header["step"] = ckpt.step;
  header["config_hash"] = ckpt.config_hash();
  header["adam_step"] = ckpt.optimizer.step;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& p : ckpt.model.parameters()) names.push_back(p.name);
  header["parameters"] = names;
  const std::string text = header.dump();
  out.write(detail::kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, detail::kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& params = ckpt.model.parameters();
  for (const auto& p : params) detail::put_blob(out, p.name, p.value);
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::put_blob(out, "adam.m." + params[i].name, ckpt.optimizer.m[i]);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::put_blob(out, "adam.v." + params[i].name, ckpt.optimizer.v[i]);
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0) {
    fail(Errc::BadMagic, path.string() + " is not a checkpoint");
  }
  std::uint32_t version = 0, len = 0;
  if (!detail::get(in, version) || version != detail::kCheckpointVersion) {
    fail(Errc::BadMagic, "unsupported checkpoint version");
  }
  if (!detail::get(in, len)) fail(Errc::HeaderShapeMismatch, "checkpoint header truncated");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) fail(Errc::HeaderShapeMismatch, "checkpoint header truncated");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  ckpt.streams.acoustic = header.at("streams").at("acoustic").get<std::string>();
  ckpt.streams.linguistic = header.at("streams").at("linguistic").get<std::string>();
  ckpt.train = TrainConfig::from_json(header.at("train"));
  ckpt.step = header.at("step").get<std::uint64_t>();
  ckpt.model = AnnotatorModel::initialize(ModelConfig::from_json(header.at("model")), 0);
  auto& params = ckpt.model.parameters();
  for (auto& p : params) {
    Matrix value = detail::get_blob(in, p.name);
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols()) {
      fail(Errc::HeaderShapeMismatch, "parameter '" + p.name + "' has the wrong shape");
    }
    p.value = std::move(value);
  }
  ckpt.optimizer = AdamState::zeros(params);
  ckpt.optimizer.step = header.at("adam_step").get<std::uint64_t>();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.optimizer.m[i] = detail::get_blob(in, "adam.m." + params[i].name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.optimizer.v[i] = detail::get_blob(in, "adam.v." + params[i].name);
  }
  if (header.at("config_hash").get<std::uint64_t>() != ckpt.config_hash()) {
    fail(Errc::HeaderShapeMismatch, "config hash does not match checkpoint contents");
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Steps

// Forward/backward over the batch, gradient averaged over utterances, one
// Adam update. Returns the batch-mean losses.
inline LossValue backward_and_step(AnnotatorModel& model, AdamState& state,
                                   std::span<const Example* const> batch,
                                   const TrainConfig& cfg) {
  if (batch.empty()) fail(Errc::InvalidConfig, "empty batch");
  model.zero_grad();
  LossValue mean;
  for (const Example* ex : batch) {
    ad::Tape tape;
    const auto logits = model.logits(tape, model.input(tape, ex->streams));
    const auto loss = multitask_loss(tape, logits, ex->targets, model.config().task_weights);
    tape.backward(loss.total);
    mean.total += tape.value(loss.total)(0, 0);
    for (std::size_t t = 0; t < 4; ++t) mean.per_task[t] += tape.value(loss.per_task[t])(0, 0);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.total *= inv;
  for (double& v : mean.per_task) v *= inv;
  for (auto& p : model.parameters()) {
    p.grad *= inv;
    if (!p.grad.allFinite()) {
      fail(Errc::NonFiniteGradient, "parameter '" + p.name + "' at optimizer step " +
                                        std::to_string(state.step + 1) + " (batch loss " +
                                        std::to_string(mean.total) + ")");
    }
  }
  adam_step(model.parameters(), state, cfg.adam);
  return mean;
}

// Argmax label per task at mora-core rows; absent bundles elsewhere.
inline std::vector<LabelBundle> decode(const TaskLogits& logits, const std::vector<bool>& mask) {
  std::vector<LabelBundle> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (Task task : kTasks) {
      Eigen::Index arg = 0;
      logits[task_index(task)].row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      set_class_index(out[i], task, static_cast<int>(arg));
    }
  }
  return out;
}

inline std::vector<LabelBundle> annotate(AnnotatorModel& model, const Example& ex) {
  return decode(forward(model, ex.streams), ex.mask);
}

// Mean over tasks of accuracy at mora-core rows.
inline double mean_accuracy(AnnotatorModel& model, std::span<const Example> examples) {
  std::array<std::size_t, 4> correct{}, total{};
  for (const auto& ex : examples) {
    const auto logits = forward(model, ex.streams);
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t i = 0; i < ex.phonemes(); ++i) {
        if (ex.targets[t][i] < 0) continue;
        Eigen::Index arg = 0;
        logits[t].row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        correct[t] += arg == ex.targets[t][i];
        ++total[t];
      }
    }
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < 4; ++t) sum += total[t] ? static_cast<double>(correct[t]) / total[t] : 0.0;
  return sum / 4.0;
}

struct LossRecord {
  std::uint64_t step = 0;
  LossValue loss;
};

struct DevRecord {
  std::uint64_t step = 0;
  double mean_accuracy = 0.0;
};

struct TrainResult {
  Checkpoint best;  // best dev mean accuracy; the final state when there is no dev set
  Checkpoint last;
  std::vector<LossRecord> losses;
  std::vector<DevRecord> dev;
  bool stopped_early = false;
};

inline void write_loss_log(const std::vector<LossRecord>& log, std::ostream& out) {
  out << "step,total,acc,hl,bi,pau\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.step << ',' << r.loss.total;
    for (double v : r.loss.per_task) out << ',' << v;
    out << '\n';
  }
}

using ProgressFn = std::function<void(const LossRecord&, const std::optional<DevRecord>&)>;

inline TrainResult train(std::span<const Example> train_set, std::span<const Example> dev_set,
                         const ModelConfig& model_config, const StreamConfig& streams,
                         const TrainConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  streams.validate();
  if (train_set.empty()) fail(Errc::InvalidConfig, "empty training set");
  for (const auto& ex : train_set) {
    bool any = false;
    for (bool m : ex.mask) any = any || m;
    if (!any) fail(Errc::EmptyMask, "utterance '" + ex.id + "' has no mora-core phonemes");
  }

  Checkpoint state;
  state.streams = streams;
  state.train = cfg;
  state.model = AnnotatorModel::initialize(model_config, cfg.seed);
  state.optimizer = AdamState::zeros(state.model.parameters());

  TrainResult result;
  result.best = state;
  double best_dev = -1.0;
  std::uint64_t stale = 0;

  auto evaluate = [&](std::uint64_t step) -> std::optional<DevRecord> {
    if (dev_set.empty()) return std::nullopt;
    DevRecord rec{step, mean_accuracy(state.model, dev_set)};
    result.dev.push_back(rec);
    if (rec.mean_accuracy > best_dev) {
      best_dev = rec.mean_accuracy;
      result.best = state;
      stale = 0;
    } else {
      ++stale;
    }
    return rec;
  };
  evaluate(0);

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  std::vector<const Example*> batch;
  for (std::uint64_t step = 1; step <= cfg.max_steps; ++step) {
    batch.clear();
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&train_set[order[cursor++]]);
    }
    const LossValue loss = backward_and_step(state.model, state.optimizer, batch, cfg);
    state.step = step;
    result.losses.push_back({step, loss});

    std::optional<DevRecord> dev;
    const bool last = step == cfg.max_steps;
    if ((cfg.eval_interval > 0 && step % cfg.eval_interval == 0) || last) dev = evaluate(step);
    if (progress) progress(result.losses.back(), dev);
    if (dev && cfg.patience > 0 && stale >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.last = state;
  if (dev_set.empty()) result.best = state;
  return result;
}

}  // namespace prosolabel
