#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kdbench/core/optimizer.hpp"
#include "kdbench/data/dataset.hpp"
#include "kdbench/data/metrics.hpp"
#include "kdbench/distill/loss.hpp"
#include "kdbench/models/model.hpp"

namespace kdb {

struct DistillConfig {
  LossMode loss_mode = LossMode::mse;
  float temperature = 1.0f;
  float lr = 1e-3f;
  std::vector<float> lr_grid{5e-3f, 1e-3f, 5e-4f, 1e-4f, 5e-5f, 1e-5f};
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 32;
  std::size_t warmup_steps = 0;  // linear learning-rate warmup over this many updates
  std::uint64_t seed = 0;

  void validate() const {
    if (!(temperature > 0.0f) || !std::isfinite(temperature)) throw ParameterError("temperature must be positive");
    if (!(lr > 0.0f)) throw ParameterError("lr must be positive");
    for (float v : lr_grid) {
      if (!(v > 0.0f)) throw ParameterError("lr_grid values must be positive");
    }
    if (patience == 0) throw ParameterError("patience must be at least 1");
    if (batch_size == 0) throw ParameterError("batch_size must be positive");
  }
};

// Per-epoch record. Epochs are numbered from 1; best_epoch is 0 when no epoch ran.
struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_f1;
  std::vector<std::size_t> steps;  // optimizer steps completed at the end of each epoch
  std::size_t best_epoch = 0;
  std::size_t steps_to_best = 0;

  std::size_t epochs() const noexcept { return val_loss.size(); }
  bool operator==(const TrainHistory&) const = default;
};

// Encoded model input with gold labels (one for classification, one per
// token for sequence labeling; empty for unlabeled text).
struct Sample {
  std::vector<std::size_t> ids;
  std::vector<float> mask;
  std::vector<std::size_t> gold;
};

struct TaskInfo {
  Task task = Task::classification;
  std::vector<std::string> labels;
  SeqLabMode seqlab_mode = SeqLabMode::token_macro;

  std::size_t num_labels() const noexcept { return labels.size(); }
};

inline TaskInfo task_info(const Dataset& d, SeqLabMode mode = SeqLabMode::token_macro) {
  return {d.task, d.labels, mode};
}

inline Sample encode_tokens(std::span<const std::string> tokens, const Vocab& vocab, Task task, std::size_t max_len) {
  Encoded e = encode(tokens, vocab, max_len, task == Task::classification);
  return {std::move(e.ids), std::move(e.mask), {}};
}

inline Sample encode_example(const Example& ex, const Vocab& vocab, Task task, std::size_t max_len) {
  Sample s = encode_tokens(ex.tokens, vocab, task, max_len);
  if (task == Task::classification) {
    s.gold = {ex.label};
  } else {
    s.gold.assign(ex.tags.begin(), ex.tags.begin() + static_cast<std::ptrdiff_t>(std::min(ex.tags.size(), s.ids.size())));
    if (ex.tags.empty()) s.gold.assign(s.ids.size(), 0);
  }
  return s;
}

inline std::vector<Sample> encode_split(const Split& split, const Vocab& vocab, Task task, std::size_t max_len) {
  std::vector<Sample> out;
  out.reserve(split.size());
  for (const auto& ex : split) out.push_back(encode_example(ex, vocab, task, max_len));
  return out;
}

inline std::vector<Sample> encode_texts(std::span<const std::string> texts, const Vocab& vocab, Task task,
                                        std::size_t max_len) {
  std::vector<Sample> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    const auto tokens = tokenize(t);
    out.push_back(encode_tokens(tokens, vocab, task, max_len));
  }
  return out;
}

// Padding mask over output rows: token rows for sequence labeling, none for classification.
inline std::span<const float> row_mask(const Sample& s, Task task) {
  return task == Task::sequence_labeling ? std::span<const float>(s.mask) : std::span<const float>();
}

// ---- Evaluation ------------------------------------------------------------

// Argmax label per output row.
inline std::vector<std::vector<std::size_t>> predict_labels(Model& model, std::span<const Sample> samples) {
  Graph g(Graph::Mode::inference);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    g.reset();
    const Tensor& logits = forward(model, g, s.ids, s.mask).value();
    std::vector<std::size_t> row(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) row[r] = argmax(logits.row(r));
    out.push_back(std::move(row));
  }
  return out;
}

inline double f1_score(const std::vector<std::vector<std::size_t>>& preds, std::span<const Sample> samples,
                       const TaskInfo& info) {
  if (info.task == Task::classification) {
    std::vector<std::size_t> p, g;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      p.push_back(preds[i].at(0));
      g.push_back(samples[i].gold.at(0));
    }
    return macro_f1(p, g, info.num_labels());
  }
  std::vector<std::vector<std::size_t>> golds;
  golds.reserve(samples.size());
  for (const auto& s : samples) golds.push_back(s.gold);
  return seqlab_f1(preds, golds, info.seqlab_mode, info.labels);
}

inline double evaluate_f1(Model& model, std::span<const Sample> samples, const TaskInfo& info) {
  return f1_score(predict_labels(model, samples), samples, info);
}

// Teacher outputs in evaluation mode, one per sample.
inline std::vector<SoftTarget> teacher_logits(Model& teacher, std::span<const Sample> samples) {
  Graph g(Graph::Mode::inference);
  std::vector<SoftTarget> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    g.reset();
    out.push_back(SoftTarget::from_logits(forward(teacher, g, s.ids, s.mask).value()));
  }
  return out;
}

inline std::vector<SoftTarget> gold_targets(std::span<const Sample> samples, std::size_t classes) {
  std::vector<SoftTarget> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(SoftTarget::from_labels(s.gold, classes));
  return out;
}

// ---- Training loop ---------------------------------------------------------

namespace detail {

struct EvalPass {
  double loss = 0.0;
  double f1 = 0.0;
};

// Mean loss against `targets` and F1 against gold labels in one forward pass each.
inline EvalPass evaluate_pass(Model& model, std::span<const Sample> samples, std::span<const SoftTarget> targets,
                              LossMode mode, float temperature, const TaskInfo& info) {
  Graph g(Graph::Mode::inference);
  EvalPass out;
  std::vector<std::vector<std::size_t>> preds;
  preds.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    g.reset();
    Var logits = forward(model, g, samples[i].ids, samples[i].mask);
    const Tensor& v = logits.value();
    std::vector<std::size_t> row(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) row[r] = argmax(v.row(r));
    preds.push_back(std::move(row));
    out.loss += distill_loss(logits, targets[i], mode, temperature, row_mask(samples[i], info.task)).value()[0];
  }
  if (!samples.empty()) out.loss /= static_cast<double>(samples.size());
  out.f1 = f1_score(preds, samples, info);
  return out;
}

}  // namespace detail

// Mini-batch Adam on `loss_mode` against `train_targets`, early-stopped on the
// same loss over the dev targets. The returned model holds the weights of the
// epoch with the lowest validation loss. F1 is measured on dev gold labels.
inline TrainHistory fit(Model& model, std::span<const Sample> train, std::span<const SoftTarget> train_targets,
                        std::span<const Sample> dev, std::span<const SoftTarget> dev_targets, LossMode loss_mode,
                        const DistillConfig& cfg, const TaskInfo& info) {
  cfg.validate();
  if (train.empty()) throw ContractError("training split is empty");
  if (dev.empty()) throw ContractError("dev split is empty");
  if (train.size() != train_targets.size() || dev.size() != dev_targets.size()) {
    throw ContractError("targets do not match samples");
  }
  TrainHistory h;
  if (cfg.max_epochs == 0) return h;

  Optimizer opt = Optimizer::adam(cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  Graph g(Graph::Mode::record, true, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> best;
  double best_loss = std::numeric_limits<double>::infinity();
  model.params.zero_grad();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const float scale = 1.0f / static_cast<float>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        g.reset();
        Var logits = forward(model, g, train[i].ids, train[i].mask);
        Var loss = distill_loss(logits, train_targets[i], loss_mode, cfg.temperature, row_mask(train[i], info.task));
        epoch_loss += loss.value()[0];
        g.backward(ops::scalar_mul(loss, scale));
      }
      if (static_cast<std::int64_t>(cfg.warmup_steps) > opt.steps()) {
        opt.set_lr(cfg.lr * static_cast<float>(opt.steps() + 1) / static_cast<float>(cfg.warmup_steps));
      } else {
        opt.set_lr(cfg.lr);
      }
      opt.step(model.params.all());
      model.params.zero_grad();
    }
    h.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    const auto eval = detail::evaluate_pass(model, dev, dev_targets, loss_mode, cfg.temperature, info);
    h.val_loss.push_back(eval.loss);
    h.val_f1.push_back(eval.f1);
    h.steps.push_back(opt.steps());
    if (h.val_loss.back() < best_loss) {
      best_loss = h.val_loss.back();
      h.best_epoch = epoch;
      h.steps_to_best = opt.steps();
      best.clear();
      for (const auto& p : model.params) best.push_back(p.value);
    }
    if (epoch - h.best_epoch >= cfg.patience) break;
  }
  for (std::size_t k = 0; k < best.size(); ++k) model.params[k].value = best[k];
  model.params.zero_grad();
  return h;
}

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Supervised training on gold labels with cross-entropy.
inline TrainResult train_supervised(Model model, std::span<const Sample> train, std::span<const Sample> dev,
                                    const DistillConfig& cfg, const TaskInfo& info) {
  const auto tt = gold_targets(train, info.num_labels());
  const auto dt = gold_targets(dev, info.num_labels());
  TrainHistory h = fit(model, train, tt, dev, dt, LossMode::hard, cfg, info);
  return {std::move(model), std::move(h)};
}

inline TrainResult fine_tune_teacher(const ModelSpec& spec, std::span<const Sample> train, std::span<const Sample> dev,
                                     const DistillConfig& cfg, const TaskInfo& info) {
  return train_supervised(build_model(spec, cfg.seed), train, dev, cfg, info);
}

inline TrainResult train_vanilla(Model student, std::span<const Sample> train, std::span<const Sample> dev,
                                 const DistillConfig& cfg, const TaskInfo& info) {
  return train_supervised(std::move(student), train, dev, cfg, info);
}

// Student fit to teacher targets; early stopping on the distillation loss
// against the teacher's targets for the dev inputs.
inline TrainResult train_student(Model student, std::span<const Sample> pool, std::span<const SoftTarget> pool_targets,
                                 std::span<const Sample> dev, std::span<const SoftTarget> dev_targets,
                                 const DistillConfig& cfg, const TaskInfo& info) {
  TrainHistory h = fit(student, pool, pool_targets, dev, dev_targets, cfg.loss_mode, cfg, info);
  return {std::move(student), std::move(h)};
}

// ---- Learning-rate search --------------------------------------------------

struct LrTrial {
  float lr;
  double dev_f1;
};

struct LrSearchResult {
  float best_lr = 0.0f;
  double best_f1 = -1.0;
  std::vector<LrTrial> trials;
};

// Log-uniform random search; `train(lr)` returns dev F1. Ties keep the earliest trial.
template <class TrainFn>
LrSearchResult lr_random_search(TrainFn&& train, float lo, float hi, std::size_t trials, std::uint64_t seed) {
  if (!(lo > 0.0f) || !(hi > lo)) throw ParameterError("lr search range must satisfy 0 < min < max");
  if (trials == 0) throw ParameterError("trials must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(std::log(static_cast<double>(lo)), std::log(static_cast<double>(hi)));
  LrSearchResult r;
  for (std::size_t t = 0; t < trials; ++t) {
    const float lr = std::clamp(static_cast<float>(std::exp(u(rng))), lo, hi);
    const double f1 = train(lr);
    r.trials.push_back({lr, f1});
    if (f1 > r.best_f1) {
      r.best_f1 = f1;
      r.best_lr = lr;
    }
  }
  return r;
}

}  // namespace kdb
