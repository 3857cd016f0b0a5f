#pragma once

// The annotation model: per-stream layer fusion, a stack of same-padded 1-D
// convolutions over the phoneme axis, and one affine softmax head per task.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosolabel/autodiff.hpp"
#include "prosolabel/corpus.hpp"
#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/random.hpp"

namespace prosolabel {

enum class Activation { Relu, Tanh };

inline std::string activation_name(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  fail(Errc::InvalidConfig, "unknown activation '" + name + "'");
}

struct ModelConfig {
  std::size_t acoustic_layers = 0;
  std::size_t acoustic_dim = 0;
  std::size_t linguistic_layers = 0;
  std::size_t linguistic_dim = 0;
  int hidden = 256;
  int conv_layers = 6;
  int kernel = 5;
  Activation activation = Activation::Relu;
  std::array<double, 4> task_weights{1.0, 1.0, 1.0, 1.0};

  std::size_t in_dim() const { return acoustic_dim + linguistic_dim; }

  void validate() const {
    if (in_dim() == 0) fail(Errc::InvalidConfig, "model has no input features");
    if ((acoustic_dim == 0) != (acoustic_layers == 0) ||
        (linguistic_dim == 0) != (linguistic_layers == 0)) {
      fail(Errc::InvalidConfig, "stream layers and dims must be both zero or both positive");
    }
    if (hidden < 1 || conv_layers < 1 || kernel < 1 || kernel % 2 == 0) {
      fail(Errc::InvalidConfig, "need hidden >= 1, conv_layers >= 1 and an odd kernel");
    }
  }

  nlohmann::json to_json() const {
    return {{"acoustic_layers", acoustic_layers}, {"acoustic_dim", acoustic_dim},
            {"linguistic_layers", linguistic_layers}, {"linguistic_dim", linguistic_dim},
            {"hidden", hidden}, {"conv_layers", conv_layers}, {"kernel", kernel},
            {"activation", activation_name(activation)}, {"task_weights", task_weights}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.acoustic_layers = j.at("acoustic_layers").get<std::size_t>();
    c.acoustic_dim = j.at("acoustic_dim").get<std::size_t>();
    c.linguistic_layers = j.at("linguistic_layers").get<std::size_t>();
    c.linguistic_dim = j.at("linguistic_dim").get<std::size_t>();
    c.hidden = j.value("hidden", 256);
    c.conv_layers = j.value("conv_layers", 6);
    c.kernel = j.value("kernel", 5);
    c.activation = parse_activation(j.value("activation", std::string("relu")));
    if (j.contains("task_weights")) c.task_weights = j.at("task_weights").get<std::array<double, 4>>();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using TaskLogits = std::array<Matrix, 4>;

// Per task, class index per phoneme; -1 marks rows excluded from the loss.
using Targets = std::array<std::vector<int>, 4>;

inline Targets make_targets(std::span<const LabelBundle> labels, const std::vector<bool>& mask) {
  if (labels.size() != mask.size()) fail(Errc::AlignmentMismatch, "labels and mask lengths differ");
  Targets targets;
  for (Task task : kTasks) {
    auto& column = targets[task_index(task)];
    column.assign(labels.size(), -1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!mask[i]) continue;
      auto cls = class_index(labels[i], task);
      if (!cls) fail(Errc::MalformedRecord, "missing label at mora-core row " + std::to_string(i));
      column[i] = *cls;
    }
  }
  return targets;
}

class AnnotatorModel {
 public:
  AnnotatorModel() = default;

  // Conv and head weights are drawn uniformly in +-sqrt(6 / fan_in); biases and
  // fusion logits start at zero (equal layer weights).
  static AnnotatorModel initialize(const ModelConfig& config, std::uint64_t seed,
                                   bool zero_heads = false) {
    config.validate();
    AnnotatorModel model;
    model.config_ = config;
    Rng rng(seed);
    auto uniform_matrix = [&](Eigen::Index rows, Eigen::Index cols, double fan_in) {
      const double bound = std::sqrt(6.0 / fan_in);
      Matrix m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = uniform(rng, -bound, bound);
      return m;
    };
    auto& p = model.params_;
    if (config.acoustic_layers > 0) {
      p.emplace_back("fusion.acoustic",
                     Matrix::Zero(1, static_cast<Eigen::Index>(config.acoustic_layers)));
    }
    if (config.linguistic_layers > 0) {
      p.emplace_back("fusion.linguistic",
                     Matrix::Zero(1, static_cast<Eigen::Index>(config.linguistic_layers)));
    }
    auto channels = static_cast<Eigen::Index>(config.in_dim());
    const Eigen::Index hidden = config.hidden;
    for (int l = 0; l < config.conv_layers; ++l) {
      const double fan_in = static_cast<double>(channels * config.kernel);
      p.emplace_back("conv" + std::to_string(l) + ".weight",
                     uniform_matrix(channels * config.kernel, hidden, fan_in));
      p.emplace_back("conv" + std::to_string(l) + ".bias", Matrix::Zero(1, hidden));
      channels = hidden;
    }
    for (Task task : kTasks) {
      const std::string name = "head." + std::string(task_name(task));
      const Eigen::Index classes = class_count(task);
      p.emplace_back(name + ".weight", zero_heads ? Matrix(Matrix::Zero(hidden, classes))
                                                  : uniform_matrix(hidden, classes,
                                                                   static_cast<double>(hidden)));
      p.emplace_back(name + ".bias", Matrix::Zero(1, classes));
    }
    return model;
  }

  const ModelConfig& config() const { return config_; }
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }

  ad::Parameter& parameter(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    fail(Errc::InvalidConfig, "no parameter '" + name + "'");
  }
  const ad::Parameter& parameter(const std::string& name) const {
    return const_cast<AnnotatorModel*>(this)->parameter(name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  FusionWeights fusion_logits() const {
    FusionWeights w;
    for (const auto& p : params_) {
      if (p.name == "fusion.acoustic") w.acoustic.assign(p.value.data(), p.value.data() + p.value.size());
      if (p.name == "fusion.linguistic") {
        w.linguistic.assign(p.value.data(), p.value.data() + p.value.size());
      }
    }
    return w;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // Builds fusion + concatenation on the tape. Stream tensors must outlive it.
  ad::Var input(ad::Tape& tape, const PhonemeStreams& streams) {
    check_streams(streams);
    std::vector<ad::Var> parts;
    if (streams.acoustic) {
      parts.push_back(ad::weighted_layers(tape, *streams.acoustic,
                                          tape.parameter(parameter("fusion.acoustic"))));
    }
    if (streams.linguistic) {
      parts.push_back(ad::weighted_layers(tape, *streams.linguistic,
                                          tape.parameter(parameter("fusion.linguistic"))));
    }
    return parts.size() == 1 ? parts[0] : ad::concat_cols(tape, parts[0], parts[1]);
  }

  std::array<ad::Var, 4> logits(ad::Tape& tape, ad::Var input) {
    if (static_cast<std::size_t>(tape.value(input).cols()) != config_.in_dim()) {
      fail(Errc::DimMismatch, "input width " + std::to_string(tape.value(input).cols()) +
                                  ", model expects " + std::to_string(config_.in_dim()));
    }
    if (tape.value(input).rows() < 1) fail(Errc::DimMismatch, "empty input");
    ad::Var h = input;
    for (int l = 0; l < config_.conv_layers; ++l) {
      const std::string prefix = "conv" + std::to_string(l);
      h = ad::conv1d_same(tape, h, tape.parameter(parameter(prefix + ".weight")),
                          tape.parameter(parameter(prefix + ".bias")), config_.kernel);
      h = config_.activation == Activation::Relu ? ad::relu(tape, h) : ad::tanh(tape, h);
    }
    std::array<ad::Var, 4> out;
    for (Task task : kTasks) {
      const std::string prefix = "head." + std::string(task_name(task));
      out[task_index(task)] = ad::affine(tape, h, tape.parameter(parameter(prefix + ".weight")),
                                         tape.parameter(parameter(prefix + ".bias")));
    }
    return out;
  }

  friend bool operator==(const AnnotatorModel& a, const AnnotatorModel& b) {
    if (!(a.config_ == b.config_) || a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || a.params_[i].value != b.params_[i].value) {
        return false;
      }
    }
    return true;
  }

 private:
  void check_streams(const PhonemeStreams& streams) const {
    if (streams.acoustic_dim() != config_.acoustic_dim ||
        streams.acoustic_layers() != config_.acoustic_layers ||
        streams.linguistic_dim() != config_.linguistic_dim ||
        streams.linguistic_layers() != config_.linguistic_layers) {
      fail(Errc::DimMismatch, "stream shapes do not match the model (acoustic " +
                                  std::to_string(streams.acoustic_layers()) + "x" +
                                  std::to_string(streams.acoustic_dim()) + ", linguistic " +
                                  std::to_string(streams.linguistic_layers()) + "x" +
                                  std::to_string(streams.linguistic_dim()) + ")");
    }
  }

  ModelConfig config_;
  std::vector<ad::Parameter> params_;
};

inline TaskLogits values(const ad::Tape& tape, const std::array<ad::Var, 4>& vars) {
  TaskLogits out;
  for (std::size_t t = 0; t < 4; ++t) out[t] = tape.value(vars[t]);
  return out;
}

// Logits for an already-fused P x in_dim input.
inline TaskLogits forward(AnnotatorModel& model, const Matrix& input) {
  ad::Tape tape;
  return values(tape, model.logits(tape, tape.constant(input)));
}

inline TaskLogits forward(AnnotatorModel& model, const PhonemeStreams& streams) {
  ad::Tape tape;
  return values(tape, model.logits(tape, model.input(tape, streams)));
}

struct LossVars {
  ad::Var total;
  std::array<ad::Var, 4> per_task;
};

// Sum over tasks of the masked mean cross-entropy, each scaled by its weight.
inline LossVars multitask_loss(ad::Tape& tape, const std::array<ad::Var, 4>& logits,
                               const Targets& targets,
                               const std::array<double, 4>& weights = {1.0, 1.0, 1.0, 1.0}) {
  LossVars out;
  std::array<ad::Var, 4> weighted;
  for (std::size_t t = 0; t < 4; ++t) {
    out.per_task[t] = ad::masked_cross_entropy(tape, logits[t], targets[t]);
    weighted[t] = weights[t] == 1.0 ? out.per_task[t] : ad::scale(tape, out.per_task[t], weights[t]);
  }
  out.total = ad::add(tape, weighted);
  return out;
}

struct LossValue {
  double total = 0.0;
  std::array<double, 4> per_task{};
};

inline LossValue multitask_loss(const TaskLogits& logits, std::span<const LabelBundle> labels,
                                const std::vector<bool>& mask) {
  for (const auto& m : logits) {
    if (static_cast<std::size_t>(m.rows()) != labels.size()) {
      fail(Errc::AlignmentMismatch, "logit rows do not match label count");
    }
  }
  const Targets targets = make_targets(labels, mask);
  ad::Tape tape;
  std::array<ad::Var, 4> vars;
  for (std::size_t t = 0; t < 4; ++t) vars[t] = tape.constant(logits[t]);
  const LossVars loss = multitask_loss(tape, vars, targets);
  LossValue out;
  out.total = tape.value(loss.total)(0, 0);
  for (std::size_t t = 0; t < 4; ++t) out.per_task[t] = tape.value(loss.per_task[t])(0, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment estimates per parameter plus the step counter.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  static AdamState zeros(const std::vector<ad::Parameter>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      s.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update from the gradients in params[i].grad.
inline void adam_step(std::vector<ad::Parameter>& params, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * p.grad;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg.lr * (state.m[i].array() / c1) /
                       ((state.v[i].array() / c2).sqrt() + cfg.eps);
  }
}

}  // namespace prosolabel
