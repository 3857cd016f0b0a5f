#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prosolabel/model.hpp"

namespace prosolabel {
namespace {

ModelConfig small_config(std::size_t in_dim) {
  ModelConfig cfg;
  cfg.acoustic_layers = 1;
  cfg.acoustic_dim = in_dim;
  cfg.hidden = 16;
  cfg.conv_layers = 3;
  return cfg;
}

TEST(Model, SingleRowInputKeepsShape) {
  auto model = AnnotatorModel::initialize(small_config(10), 1);
  Rng rng(1);
  Matrix x(1, 10);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, -1, 1);
  const auto logits = forward(model, x);
  for (Task task : kTasks) {
    EXPECT_EQ(logits[task_index(task)].rows(), 1);
    EXPECT_EQ(logits[task_index(task)].cols(), class_count(task));
    EXPECT_TRUE(logits[task_index(task)].allFinite());
  }
}

TEST(Model, LengthIsPreserved) {
  auto model = AnnotatorModel::initialize(small_config(4), 2);
  for (Eigen::Index p : {2, 3, 17}) {
    const auto logits = forward(model, Matrix::Ones(p, 4));
    for (const auto& m : logits) EXPECT_EQ(m.rows(), p);
  }
}

TEST(Model, ZeroInputZeroHeadsGivesUniformLogits) {
  auto model = AnnotatorModel::initialize(small_config(6), 3, /*zero_heads=*/true);
  const auto logits = forward(model, Matrix::Zero(5, 6));
  for (const auto& m : logits) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) EXPECT_EQ(m.row(r).maxCoeff(), m.row(r).minCoeff());
  }
}

TEST(Model, DefaultShapeAndParameterCount) {
  ModelConfig cfg;
  cfg.acoustic_layers = 13;
  cfg.acoustic_dim = 768;
  cfg.linguistic_layers = 13;
  cfg.linguistic_dim = 512;
  const auto model = AnnotatorModel::initialize(cfg, 0);
  const std::size_t in_dim = 768 + 512;
  const std::size_t conv = (in_dim * 5 * 256 + 256) + 5 * (256 * 5 * 256 + 256);
  const std::size_t heads = (256 * 6 + 6) * 2 + (256 * 2 + 2) * 2;
  EXPECT_EQ(model.parameter_count(), 13 + 13 + conv + heads);
  // pure function of the input shape
  EXPECT_EQ(AnnotatorModel::initialize(cfg, 99).parameter_count(), model.parameter_count());
}

TEST(Model, DimMismatch) {
  auto model = AnnotatorModel::initialize(small_config(6), 3);
  try {
    forward(model, Matrix::Zero(5, 7));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimMismatch);
  }
  EXPECT_THROW(forward(model, Matrix::Zero(0, 6)), Error);
  ModelConfig bad = small_config(6);
  bad.kernel = 4;
  EXPECT_THROW(AnnotatorModel::initialize(bad, 0), Error);
}

TEST(Model, SeededInitIsDeterministic) {
  EXPECT_EQ(AnnotatorModel::initialize(small_config(6), 5), AnnotatorModel::initialize(small_config(6), 5));
  EXPECT_FALSE(AnnotatorModel::initialize(small_config(6), 5) ==
               AnnotatorModel::initialize(small_config(6), 6));
}

std::vector<LabelBundle> random_labels(Rng& rng, std::size_t n) {
  std::vector<LabelBundle> out(n);
  for (auto& b : out) {
    for (Task task : kTasks) {
      set_class_index(b, task, static_cast<int>(uniform_index(rng, class_count(task))));
    }
  }
  return out;
}

TaskLogits random_logits(Rng& rng, Eigen::Index rows) {
  TaskLogits out;
  for (Task task : kTasks) {
    Matrix m(rows, class_count(task));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -4, 4);
    out[task_index(task)] = m;
  }
  return out;
}

TEST(Loss, UniformLogitsClosedForm) {
  Rng rng(1);
  const auto labels = random_labels(rng, 7);
  const std::vector<bool> mask{true, false, true, true, false, true, true};
  TaskLogits zero;
  for (Task task : kTasks) zero[task_index(task)] = Matrix::Zero(7, class_count(task));
  const auto loss = multitask_loss(zero, labels, mask);
  EXPECT_NEAR(loss.total, 2 * std::log(6.0) + 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(loss.total, 4.9698, 1e-4);
  EXPECT_NEAR(loss.per_task[task_index(Task::Acc)], std::log(6.0), 1e-12);
  EXPECT_NEAR(loss.per_task[task_index(Task::Pau)], std::log(2.0), 1e-12);
}

TEST(Loss, ConfidentCorrectLogitsApproachZero) {
  Rng rng(2);
  const auto labels = random_labels(rng, 4);
  const std::vector<bool> mask(4, true);
  TaskLogits logits;
  for (Task task : kTasks) {
    Matrix m = Matrix::Zero(4, class_count(task));
    for (Eigen::Index r = 0; r < 4; ++r) m(r, *class_index(labels[static_cast<std::size_t>(r)], task)) = 60.0;
    logits[task_index(task)] = m;
  }
  EXPECT_LT(multitask_loss(logits, labels, mask).total, 1e-20);
}

TEST(Loss, MaskedRowsAreIgnoredBitwise) {
  Rng rng(3);
  for (int c = 0; c < 50; ++c) {
    const std::size_t n = 2 + uniform_index(rng, 10);
    auto labels = random_labels(rng, n);
    std::vector<bool> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = uniform01(rng) < 0.6;
    mask[0] = true;
    mask[1] = false;
    auto logits = random_logits(rng, static_cast<Eigen::Index>(n));
    const auto before = multitask_loss(logits, labels, mask);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) continue;
      for (auto& m : logits) m.row(static_cast<Eigen::Index>(i)).setConstant(uniform(rng, -1e3, 1e3));
      labels[i] = LabelBundle{};  // labels there may even be absent
    }
    const auto after = multitask_loss(logits, labels, mask);
    EXPECT_EQ(before.total, after.total);
    EXPECT_EQ(before.per_task, after.per_task);
    const auto expect = oracle::brute_force_loss(logits, labels, mask);
    double sum = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_NEAR(after.per_task[t], expect[t], 1e-12);
      sum += after.per_task[t];
    }
    EXPECT_NEAR(after.total, sum, 1e-9);
  }
}

TEST(Loss, EmptyMaskIsAnError) {
  Rng rng(4);
  const auto labels = random_labels(rng, 3);
  try {
    multitask_loss(random_logits(rng, 3), labels, std::vector<bool>(3, false));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyMask);
  }
}

TEST(Loss, TaskWeightsScaleTheSum) {
  Rng rng(5);
  const auto labels = random_labels(rng, 5);
  const std::vector<bool> mask(5, true);
  const auto logits = random_logits(rng, 5);
  const Targets targets = make_targets(labels, mask);
  ad::Tape tape;
  std::array<ad::Var, 4> vars;
  for (std::size_t t = 0; t < 4; ++t) vars[t] = tape.constant(logits[t]);
  const auto plain = multitask_loss(tape, vars, targets);
  const auto weighted = multitask_loss(tape, vars, targets, {2.0, 0.0, 1.0, 0.5});
  double expect = 0.0;
  const double w[] = {2.0, 0.0, 1.0, 0.5};
  for (std::size_t t = 0; t < 4; ++t) expect += w[t] * tape.value(plain.per_task[t])(0, 0);
  EXPECT_NEAR(tape.value(weighted.total)(0, 0), expect, 1e-12);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<ad::Parameter> params{{"p", Matrix::Constant(1, 1, 1.0)}};
  AdamState state = AdamState::zeros(params);
  AdamConfig cfg;
  cfg.lr = 0.1;
  params[0].grad(0, 0) = 2.0 * params[0].value(0, 0);  // d/dp p^2
  adam_step(params, state, cfg);
  EXPECT_NEAR(params[0].value(0, 0), 0.9, 1e-8);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, MinimizesAQuadratic) {
  std::vector<ad::Parameter> params{{"p", Matrix::Constant(1, 2, 3.0)}};
  AdamState state = AdamState::zeros(params);
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 2000; ++i) {
    params[0].grad = 2.0 * params[0].value;
    adam_step(params, state, cfg);
  }
  EXPECT_LT(params[0].value.cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Gradient, FullGraphMatchesFiniteDifferences) {
  Rng rng(11);
  for (Activation act : {Activation::Relu, Activation::Tanh}) {
    auto ex = oracle::mini_example(rng, 6, 3, 4, 2, 3);
    ModelConfig cfg = oracle::mini_config(ex);
    cfg.activation = act;
    auto model = AnnotatorModel::initialize(cfg, 7);
    oracle::perturb(model, rng);
    const auto check = oracle::gradient_check(model, ex.streams, ex.targets);
    EXPECT_LT(check.worst, 1e-4) << activation_name(act) << " worst at " << check.where;
    EXPECT_EQ(check.entries, model.parameter_count());
  }
}

TEST(Gradient, EveryParameterGroupReceivesGradient) {
  Rng rng(12);
  auto ex = oracle::mini_example(rng, 6, 3, 4, 2, 3);
  auto model = AnnotatorModel::initialize(oracle::mini_config(ex), 8);
  oracle::perturb(model, rng);
  model.zero_grad();
  ad::Tape tape;
  tape.backward(multitask_loss(tape, model.logits(tape, model.input(tape, ex.streams)), ex.targets).total);
  for (const auto& p : model.parameters()) EXPECT_GT(p.grad.cwiseAbs().maxCoeff(), 0.0) << p.name;
}

TEST(Model, StreamShapeMismatch) {
  Rng rng(13);
  auto ex = oracle::mini_example(rng, 4, 3, 4, 2, 3);
  auto model = AnnotatorModel::initialize(oracle::mini_config(ex), 0);
  auto other = oracle::mini_example(rng, 4, 2, 4, 2, 3);
  try {
    forward(model, other.streams);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimMismatch);
  }
}

}  // namespace
}  // namespace prosolabel
