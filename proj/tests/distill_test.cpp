#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kdbench/core/grad_check.hpp"
#include "kdbench/data/synth.hpp"
#include "kdbench/distill/train.hpp"

namespace {

using kdb::LossMode;
using kdb::SoftTarget;
using kdb::Tensor;

double loss_value(const Tensor& student, const SoftTarget& t, LossMode mode, float temp = 1.0f,
                  std::vector<float> mask = {}) {
  kdb::Graph g;
  return kdb::distill_loss(g.input(student), t, mode, temp, mask).value()[0];
}

struct Fixture {
  kdb::Dataset data;
  kdb::Vocab vocab;
  kdb::TaskInfo info;
  std::vector<kdb::Sample> train, dev, test;
};

Fixture make_cls(std::uint64_t seed, float noise, std::size_t classes = 2, std::size_t n_train = 200) {
  kdb::SynthClassificationConfig c;
  c.seed = seed;
  c.noise = noise;
  c.n_classes = classes;
  c.n_train = n_train;
  c.n_dev = 60;
  c.n_test = 100;
  c.vocab_size = 60;
  Fixture f;
  f.data = kdb::synth_classification(c);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& e : f.data.train) corpus.push_back(e.tokens);
  f.vocab = kdb::Vocab::build(corpus);
  f.info = kdb::task_info(f.data);
  f.train = kdb::encode_split(f.data.train, f.vocab, f.data.task, 24);
  f.dev = kdb::encode_split(f.data.dev, f.vocab, f.data.task, 24);
  f.test = kdb::encode_split(f.data.test, f.vocab, f.data.task, 24);
  return f;
}

kdb::CnnSpec cnn_for(const Fixture& f) {
  kdb::CnnSpec s;
  s.vocab_size = f.vocab.size();
  s.max_len = 24;
  s.num_classes = f.info.num_labels();
  s.task = f.info.task;
  s.embed_dim = 16;
  return s;
}

TEST(DistillLoss, MseHandCase) {
  auto t = SoftTarget::from_logits(Tensor::matrix({{3.0f, 4.0f}}));
  EXPECT_EQ(loss_value(Tensor::matrix({{1.0f, 2.0f}}), t, LossMode::mse), 4.0);
}

TEST(DistillLoss, KldHandCases) {
  auto onehot = SoftTarget::from_probs(Tensor::vector({1.0f, 0.0f}));
  EXPECT_NEAR(loss_value(Tensor::matrix({{0.0f, 0.0f}}), onehot, LossMode::kld), std::log(2.0), 1e-6);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d(0.0f, 3.0f);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits({2, 4});
    for (auto& v : logits.data()) v = d(rng);
    auto t = SoftTarget::from_logits(logits);
    for (float temp : {0.5f, 1.0f, 2.0f}) EXPECT_NEAR(loss_value(logits, t, LossMode::kld, temp), 0.0, 1e-6);
    EXPECT_EQ(loss_value(logits, t, LossMode::mse), 0.0);
  }
}

TEST(DistillLoss, HardTargetsFollowArgmax) {
  auto neutral = SoftTarget::from_probs(Tensor::vector({0.3f, 0.5f, 0.2f}));
  EXPECT_EQ(neutral.hard, (std::vector<std::size_t>{1}));
  auto positive = SoftTarget::from_probs(Tensor::vector({0.7f, 0.2f, 0.1f}));
  EXPECT_EQ(positive.hard, (std::vector<std::size_t>{0}));
  // -log softmax([0, ln 2, 0])[1] = log(4) - log(2)
  const double expect = std::log(4.0) - std::log(2.0);
  EXPECT_NEAR(loss_value(Tensor::matrix({{0.0f, std::log(2.0f), 0.0f}}), neutral, LossMode::hard), expect, 1e-6);
  auto tie = SoftTarget::from_logits(Tensor::matrix({{1.0f, 1.0f}}));
  EXPECT_EQ(tie.hard[0], 0u);
}

TEST(DistillLoss, MaskExcludesPadRows) {
  auto t = SoftTarget::from_logits(Tensor::matrix({{1.0f, 1.0f}, {0.0f, 0.0f}, {9.0f, 9.0f}}));
  Tensor s = Tensor::matrix({{1.0f, 1.0f}, {2.0f, 0.0f}, {0.0f, 0.0f}});
  // rows 0 and 1: squared errors 0,0,4,0 over 4 elements
  EXPECT_EQ(loss_value(s, t, LossMode::mse, 1.0f, {1, 1, 0}), 1.0);
  EXPECT_THROW(loss_value(s, t, LossMode::mse, 1.0f, {0, 0, 0}), kdb::ContractError);
  EXPECT_THROW(loss_value(s, t, LossMode::mse, 1.0f, {1, 0}), kdb::DimensionError);
}

TEST(DistillLoss, Errors) {
  auto t = SoftTarget::from_logits(Tensor::matrix({{1.0f, 2.0f}}));
  EXPECT_THROW(loss_value(Tensor::matrix({{1.0f, 2.0f, 3.0f}}), t, LossMode::mse), kdb::DimensionError);
  EXPECT_THROW(loss_value(Tensor::matrix({{1.0f, 2.0f}}), t, LossMode::kld, 0.0f), kdb::ParameterError);
  EXPECT_THROW(kdb::parse_loss_mode("ce"), kdb::ParameterError);
  EXPECT_EQ(kdb::parse_loss_mode("kld"), LossMode::kld);
  EXPECT_THROW(SoftTarget::from_probs(Tensor::vector({0.5f, 0.2f})), kdb::ParameterError);
}

TEST(SoftTarget, ProbabilitiesAndArgmaxInvariance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> d(0.0f, 2.0f);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor logits({3, 3});
    for (auto& v : logits.data()) v = d(rng);
    auto t = SoftTarget::from_logits(logits);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (float p : t.probs.row(r)) sum += p;
      EXPECT_NEAR(sum, 1.0, 1e-6);
      EXPECT_EQ(t.hard[r], kdb::argmax(t.probs.row(r)));
      for (float temp : {0.5f, 1.0f, 2.0f, 10.0f}) {
        EXPECT_EQ(kdb::argmax(kdb::softmax_with_temperature(logits, temp).row(r)), t.hard[r]);
      }
    }
  }
}

// Loss gradients through a full student forward, checked in double precision.
TEST(DistillLoss, GradCheckThroughStudents) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> d(0.0f, 1.5f);
  kdb::BiLstmSpec b;
  b.embed_dim = 4, b.hidden_dim = 3, b.vocab_size = 10, b.max_len = 8, b.num_classes = 3;
  kdb::CnnSpec c;
  c.embed_dim = 4, c.vocab_size = 10, c.max_len = 8, c.num_classes = 3, c.task = kdb::Task::sequence_labeling;
  for (const kdb::ModelSpec& spec : {kdb::ModelSpec(b), kdb::ModelSpec(c)}) {
    for (LossMode mode : {LossMode::mse, LossMode::kld, LossMode::hard}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto m = kdb::model_cast<double>(kdb::build_model(spec, seed));
        std::vector<std::size_t> ids{4, 7, 5, 9};
        std::vector<float> mask{1, 1, 1, 0};
        const std::size_t rows = kdb::task_of(spec) == kdb::Task::classification ? 1 : 4;
        Tensor tl({rows, 3});
        for (auto& v : tl.data()) v = d(rng);
        auto target = SoftTarget::from_logits(tl);
        std::vector<float> loss_mask = rows == 1 ? std::vector<float>{} : mask;
        auto loss = [&](kdb::BasicGraph<double>& g) {
          return kdb::distill_loss(kdb::forward(m, g, ids, mask), target, mode, 2.0f, loss_mask);
        };
        EXPECT_LT(kdb::grad_check_parameters(loss, m.params.all(), 1e-4, 5, seed), 1e-3)
            << kdb::loss_mode_name(mode) << " " << kdb::family_name(m.family());
      }
    }
  }
}

TEST(DistillConfig, Validation) {
  kdb::DistillConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.patience, 10u);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.max_epochs, 200u);
  EXPECT_EQ(c.lr_grid, (std::vector<float>{5e-3f, 1e-3f, 5e-4f, 1e-4f, 5e-5f, 1e-5f}));
  auto bad = c;
  bad.temperature = 0.0f;
  EXPECT_THROW(bad.validate(), kdb::ParameterError);
  bad = c;
  bad.patience = 0;
  EXPECT_THROW(bad.validate(), kdb::ParameterError);
  bad = c;
  bad.lr = -1.0f;
  EXPECT_THROW(bad.validate(), kdb::ParameterError);
}

TEST(Train, TeacherLearnsEasyTask) {
  Fixture f = make_cls(1, 0.0f);
  kdb::TransformerSpec s = kdb::TransformerSpec::preset(2, 1, 32, f.vocab.size(), 24, 2, kdb::Task::classification);
  kdb::DistillConfig cfg;
  cfg.max_epochs = 50;
  cfg.patience = 5;
  cfg.lr = 2e-3f;
  auto r = kdb::fine_tune_teacher(s, f.train, f.dev, cfg, f.info);
  EXPECT_GT(kdb::evaluate_f1(r.model, f.dev, f.info), 0.95);
  EXPECT_LE(r.history.epochs(), 50u);
}

TEST(Train, EarlyStoppingInvariants) {
  Fixture f = make_cls(2, 0.3f);
  kdb::DistillConfig cfg;
  cfg.max_epochs = 60;
  cfg.patience = 3;
  cfg.lr = 5e-3f;
  auto r = kdb::train_vanilla(kdb::build_model(cnn_for(f), 1), f.train, f.dev, cfg, f.info);
  const auto& h = r.history;
  ASSERT_GE(h.best_epoch, 1u);
  for (double v : h.val_loss) EXPECT_LE(h.val_loss[h.best_epoch - 1], v);
  if (h.epochs() < cfg.max_epochs) {
    EXPECT_EQ(h.epochs(), h.best_epoch + cfg.patience);
  }
  EXPECT_EQ(h.train_loss.size(), h.epochs());
  EXPECT_EQ(h.val_f1.size(), h.epochs());
  EXPECT_EQ(h.steps_to_best, h.steps[h.best_epoch - 1]);
  // 200 examples in batches of 32 = 7 steps per epoch.
  EXPECT_EQ(h.steps.front(), 7u);
  // The returned weights are the best epoch's: their dev loss matches the record.
  auto dt = kdb::gold_targets(f.dev, 2);
  auto pass = kdb::detail::evaluate_pass(r.model, f.dev, dt, LossMode::hard, 1.0f, f.info);
  EXPECT_NEAR(pass.loss, h.val_loss[h.best_epoch - 1], 1e-9);
}

TEST(Train, DeterministicUnderSeed) {
  Fixture f = make_cls(3, 0.1f);
  kdb::DistillConfig cfg;
  cfg.max_epochs = 4;
  kdb::CnnSpec s = cnn_for(f);
  s.dropout = 0.2f;
  auto a = kdb::train_vanilla(kdb::build_model(s, 5), f.train, f.dev, cfg, f.info);
  auto b = kdb::train_vanilla(kdb::build_model(s, 5), f.train, f.dev, cfg, f.info);
  EXPECT_EQ(a.history, b.history);
  for (std::size_t i = 0; i < a.model.params.size(); ++i) EXPECT_EQ(a.model.params[i].value, b.model.params[i].value);
}

// Adam's first update moves each weight by about lr, so a long warmup
// shrinks the first epoch's movement by the warmup factor.
TEST(Train, WarmupScalesEarlyUpdates) {
  Fixture f = make_cls(6, 0.1f);
  kdb::DistillConfig cfg;
  cfg.max_epochs = 1;
  cfg.patience = 1;
  const kdb::Model init = kdb::build_model(cnn_for(f), 3);
  auto moved = [&](std::size_t warmup) {
    cfg.warmup_steps = warmup;
    const auto r = kdb::train_vanilla(init, f.train, f.dev, cfg, f.info);
    double m = 0.0;
    for (std::size_t i = 0; i < init.params.size(); ++i) {
      const auto& a = r.model.params[i].value;
      const auto& b = init.params[i].value;
      for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, static_cast<double>(std::fabs(a[j] - b[j])));
    }
    return m;
  };
  const double plain = moved(0);
  const double slow = moved(1000000);
  EXPECT_GT(plain, 1e-3);
  EXPECT_LT(slow, plain * 1e-3);
  // Warmup longer than the run but short enough to matter stays in between.
  const double partial = moved(14);
  EXPECT_LT(partial, plain);
  EXPECT_GT(partial, slow);
}

TEST(Train, ZeroEpochBudgetKeepsModel) {
  Fixture f = make_cls(4, 0.0f);
  kdb::DistillConfig cfg;
  cfg.max_epochs = 0;
  kdb::Model init = kdb::build_model(cnn_for(f), 2);
  auto r = kdb::train_vanilla(init, f.train, f.dev, cfg, f.info);
  EXPECT_EQ(r.history.epochs(), 0u);
  EXPECT_EQ(r.history.best_epoch, 0u);
  for (std::size_t i = 0; i < init.params.size(); ++i) EXPECT_EQ(r.model.params[i].value, init.params[i].value);
}

TEST(Train, RejectsEmptySplits) {
  Fixture f = make_cls(4, 0.0f);
  kdb::DistillConfig cfg;
  std::vector<kdb::Sample> none;
  EXPECT_THROW(kdb::train_vanilla(kdb::build_model(cnn_for(f), 2), none, f.dev, cfg, f.info), kdb::ContractError);
  EXPECT_THROW(kdb::train_vanilla(kdb::build_model(cnn_for(f), 2), f.train, none, cfg, f.info), kdb::ContractError);
}

TEST(Train, CnnVanillaOnEasyTask) {
  Fixture f = make_cls(5, 0.0f, 3, 300);
  kdb::DistillConfig cfg;
  cfg.max_epochs = 40;
  cfg.patience = 5;
  cfg.lr = 5e-3f;
  auto r = kdb::train_vanilla(kdb::build_model(cnn_for(f), 1), f.train, f.dev, cfg, f.info);
  EXPECT_GT(kdb::evaluate_f1(r.model, f.test, f.info), 0.8);
}

TEST(Train, StudentMatchesSameArchitectureTeacher) {
  Fixture f = make_cls(6, 0.0f);
  kdb::CnnSpec s = cnn_for(f);
  s.dropout = 0.0f;
  kdb::Model teacher = kdb::build_model(s, 11);
  auto targets = kdb::teacher_logits(teacher, f.train);
  auto dev_targets = kdb::teacher_logits(teacher, f.dev);
  kdb::Model student = kdb::build_model(s, 12);
  const double initial =
      kdb::detail::evaluate_pass(student, f.train, targets, LossMode::mse, 1.0f, f.info).loss;
  kdb::DistillConfig cfg;
  cfg.loss_mode = LossMode::mse;
  cfg.max_epochs = 80;
  cfg.patience = 80;
  cfg.lr = 3e-3f;
  auto r = kdb::train_student(student, f.train, targets, f.dev, dev_targets, cfg, f.info);
  const double final_loss = kdb::detail::evaluate_pass(r.model, f.train, targets, LossMode::mse, 1.0f, f.info).loss;
  EXPECT_LT(final_loss, 0.05 * initial) << initial << " -> " << final_loss;
}

TEST(TeacherLogits, ShapeAndDeterminism) {
  Fixture f = make_cls(7, 0.0f, 3);
  kdb::Model teacher = kdb::build_model(cnn_for(f), 3);
  auto a = kdb::teacher_logits(teacher, f.train);
  auto b = kdb::teacher_logits(teacher, f.train);
  ASSERT_EQ(a.size(), f.train.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].logits, b[i].logits);
    EXPECT_EQ(a[i].probs.cols(), 3u);
    double sum = 0.0;
    for (float p : a[i].probs.data()) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_EQ(a[i].hard[0], kdb::argmax(a[i].probs.row(0)));
  }
}

TEST(LrSearch, BoundsAndArgmax) {
  std::vector<float> seen;
  auto fn = [&](float lr) {
    seen.push_back(lr);
    return -std::fabs(std::log(lr) - std::log(1e-3f));
  };
  auto r = kdb::lr_random_search(fn, 5e-5f, 1e-2f, 20, 4);
  ASSERT_EQ(r.trials.size(), 20u);
  double best = -1e9;
  for (const auto& t : r.trials) {
    EXPECT_GE(t.lr, 5e-5f);
    EXPECT_LE(t.lr, 1e-2f);
    best = std::max(best, t.dev_f1);
  }
  EXPECT_EQ(r.best_f1, best);
  auto again = kdb::lr_random_search(fn, 5e-5f, 1e-2f, 20, 4);
  EXPECT_EQ(again.best_lr, r.best_lr);
  auto one = kdb::lr_random_search(fn, 5e-5f, 1e-2f, 1, 8);
  ASSERT_EQ(one.trials.size(), 1u);
  EXPECT_EQ(one.best_lr, one.trials[0].lr);
  EXPECT_THROW(kdb::lr_random_search(fn, 1e-2f, 1e-2f, 3, 0), kdb::ParameterError);
  EXPECT_THROW(kdb::lr_random_search(fn, 5e-5f, 1e-2f, 0, 0), kdb::ParameterError);
}

}  // namespace
