#pragma once

// Accuracy, macro F1 and confusion matrices per task over mora-core
// positions, plus layer-weight reporting.

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosolabel/corpus.hpp"
#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/train.hpp"

namespace prosolabel {

// Rows are reference classes, columns predictions, both in enumeration order.
struct ConfusionMatrix {
  Task task = Task::Acc;
  std::vector<std::vector<std::size_t>> counts;

  static ConfusionMatrix zeros(Task task) {
    const auto k = static_cast<std::size_t>(class_count(task));
    return {task, std::vector<std::vector<std::size_t>>(k, std::vector<std::size_t>(k, 0))};
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }
  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
    return n;
  }
  double accuracy() const {
    const auto n = total();
    return n ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;    // reference count
  std::size_t predicted = 0;  // hypothesis count
};

struct TaskScore {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t total = 0;
  std::vector<ClassScore> classes;
};

struct ScoreReport {
  std::array<TaskScore, 4> tasks;
  std::array<ConfusionMatrix, 4> confusion;
};

struct ScoreOptions {
  // When false, classes with no reference and no predicted instance are left
  // out of the macro average instead of contributing F1 = 0.
  bool include_absent_classes = true;
};

inline TaskScore summarize(const ConfusionMatrix& cm, const ScoreOptions& opt = {}) {
  const std::size_t k = cm.counts.size();
  TaskScore s;
  s.total = cm.total();
  s.accuracy = cm.accuracy();
  s.classes.resize(k);
  double f1_sum = 0.0;
  std::size_t averaged = 0;
  for (std::size_t c = 0; c < k; ++c) {
    auto& cls = s.classes[c];
    const std::size_t tp = cm.counts[c][c];
    for (std::size_t j = 0; j < k; ++j) {
      cls.support += cm.counts[c][j];
      cls.predicted += cm.counts[j][c];
    }
    cls.precision = cls.predicted ? static_cast<double>(tp) / cls.predicted : 0.0;
    cls.recall = cls.support ? static_cast<double>(tp) / cls.support : 0.0;
    const std::size_t denom = cls.support + cls.predicted;
    cls.f1 = tp ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
    if (opt.include_absent_classes || denom > 0) {
      f1_sum += cls.f1;
      ++averaged;
    }
  }
  s.macro_f1 = averaged ? f1_sum / static_cast<double>(averaged) : 0.0;
  return s;
}

// Tallies per-utterance label sequences. Only positions where the reference
// phoneme is a mora core are scored.
inline ScoreReport score(std::span<const Utterance> ref,
                         std::span<const std::vector<LabelBundle>> hyp,
                         const ScoreOptions& opt = {}) {
  if (ref.size() != hyp.size()) {
    fail(Errc::AlignmentMismatch, std::to_string(hyp.size()) + " hypotheses for " +
                                      std::to_string(ref.size()) + " references");
  }
  ScoreReport report;
  for (Task task : kTasks) report.confusion[task_index(task)] = ConfusionMatrix::zeros(task);
  for (std::size_t u = 0; u < ref.size(); ++u) {
    const auto& utt = ref[u];
    if (!utt.labels) fail(Errc::UnlabeledUtterance, utt.id);
    if (hyp[u].size() != utt.phonemes.size()) {
      fail(Errc::AlignmentMismatch, utt.id + ": " + std::to_string(hyp[u].size()) +
                                        " predicted positions for " +
                                        std::to_string(utt.phonemes.size()) + " phonemes");
    }
    for (std::size_t i = 0; i < utt.phonemes.size(); ++i) {
      if (!utt.phonemes[i].mora_core) continue;
      for (Task task : kTasks) {
        const auto r = class_index((*utt.labels)[i], task);
        const auto h = class_index(hyp[u][i], task);
        if (!r || !h) {
          fail(Errc::AlignmentMismatch, utt.id + ": missing " + std::string(task_name(task)) +
                                            " label at mora core " + std::to_string(i));
        }
        ++report.confusion[task_index(task)].counts[static_cast<std::size_t>(*r)]
                                                   [static_cast<std::size_t>(*h)];
      }
    }
  }
  for (Task task : kTasks) {
    report.tasks[task_index(task)] = summarize(report.confusion[task_index(task)], opt);
  }
  return report;
}

// Hypothesis given as utterances (e.g. an annotated manifest), matched by order and id.
inline ScoreReport score(std::span<const Utterance> ref, std::span<const Utterance> hyp,
                         const ScoreOptions& opt = {}) {
  if (ref.size() != hyp.size()) {
    fail(Errc::AlignmentMismatch, std::to_string(hyp.size()) + " hypotheses for " +
                                      std::to_string(ref.size()) + " references");
  }
  std::vector<std::vector<LabelBundle>> labels;
  for (std::size_t u = 0; u < hyp.size(); ++u) {
    if (hyp[u].id != ref[u].id) {
      fail(Errc::AlignmentMismatch, "utterance " + std::to_string(u) + ": id '" + hyp[u].id +
                                        "' vs '" + ref[u].id + "'");
    }
    if (!hyp[u].labels) fail(Errc::UnlabeledUtterance, hyp[u].id);
    labels.push_back(*hyp[u].labels);
  }
  return score(ref, std::span<const std::vector<LabelBundle>>(labels), opt);
}

inline nlohmann::json to_json(const ScoreReport& report) {
  nlohmann::json out = nlohmann::json::object();
  for (Task task : kTasks) {
    const auto& s = report.tasks[task_index(task)];
    nlohmann::json classes = nlohmann::json::object();
    for (std::size_t c = 0; c < s.classes.size(); ++c) {
      const auto& cls = s.classes[c];
      classes[std::string(class_symbol(task, static_cast<int>(c)))] = {
          {"precision", cls.precision}, {"recall", cls.recall}, {"f1", cls.f1},
          {"support", cls.support}, {"predicted", cls.predicted}};
    }
    out[std::string(task_name(task))] = {{"accuracy", s.accuracy},
                                         {"macro_f1", s.macro_f1},
                                         {"total", s.total},
                                         {"classes", classes}};
  }
  return out;
}

inline void write_scores(const ScoreReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "scores.json");
    if (!out) fail(Errc::Io, "cannot write scores.json");
    out << to_json(report).dump(2) << '\n';
  }
  for (Task task : kTasks) {
    const auto& cm = report.confusion[task_index(task)];
    std::ofstream out(dir / ("confusion_" + std::string(task_name(task)) + ".csv"));
    if (!out) fail(Errc::Io, "cannot write confusion csv");
    out << "ref\\hyp";
    for (int c = 0; c < class_count(task); ++c) out << ',' << class_symbol(task, c);
    out << '\n';
    for (int r = 0; r < class_count(task); ++r) {
      out << class_symbol(task, r);
      for (int c = 0; c < class_count(task); ++c) {
        out << ',' << cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      }
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Layer weights

// Softmax-normalized fusion weights per stream side ("acoustic", "linguistic").
inline std::map<std::string, std::vector<double>> report_layer_weights(const Checkpoint& ckpt) {
  std::map<std::string, std::vector<double>> out;
  const FusionWeights logits = ckpt.model.fusion_logits();
  if (!logits.acoustic.empty()) out["acoustic"] = softmax(logits.acoustic);
  if (!logits.linguistic.empty()) out["linguistic"] = softmax(logits.linguistic);
  return out;
}

inline void write_layer_weights(const std::map<std::string, std::vector<double>>& weights,
                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [stream, w] : weights) {
    std::ofstream out(dir / ("layer_weights_" + stream + ".csv"));
    if (!out) fail(Errc::Io, "cannot write layer weights");
    out.precision(10);
    out << "layer,weight\n";
    for (std::size_t l = 0; l < w.size(); ++l) out << l << ',' << w[l] << '\n';
  }
}

}  // namespace prosolabel
