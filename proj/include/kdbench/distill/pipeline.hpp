#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "kdbench/augment/augment.hpp"
#include "kdbench/distill/train.hpp"
#include "kdbench/embed/embedding.hpp"

namespace kdb {

// Hill-climbing ladder: each stage adds one ingredient to the previous one.
enum class Stage { vanilla, kd, kd_ulb, kd_ulb_embed };

inline constexpr Stage all_stages[] = {Stage::vanilla, Stage::kd, Stage::kd_ulb, Stage::kd_ulb_embed};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::vanilla: return "vanilla";
    case Stage::kd: return "kd";
    case Stage::kd_ulb: return "kd_ulb";
    case Stage::kd_ulb_embed: return "kd_ulb_embed";
  }
  return "?";
}

inline const char* stage_label(Stage s) {
  switch (s) {
    case Stage::vanilla: return "Vanilla";
    case Stage::kd: return "KD";
    case Stage::kd_ulb: return "KD Ulb";
    case Stage::kd_ulb_embed: return "KD Ulb + Embed";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  for (Stage st : all_stages) {
    if (s == stage_name(st)) return st;
  }
  throw ParameterError("unknown stage '" + s + "' (expected vanilla, kd, kd_ulb or kd_ulb_embed)");
}

// Everything a stage may need. Teacher targets are computed once on construction.
struct PipelineContext {
  TaskInfo info;
  const Vocab* vocab = nullptr;
  std::vector<Sample> train, dev, test;
  Model* teacher = nullptr;
  std::vector<SoftTarget> train_targets, dev_targets;
  const PseudoLabeledSet* pool = nullptr;
  const EmbeddingTable* embeddings = nullptr;

  void compute_teacher_targets() {
    if (!teacher) return;
    train_targets = teacher_logits(*teacher, train);
    dev_targets = teacher_logits(*teacher, dev);
  }
};

struct StageResult {
  std::string model;
  Stage stage = Stage::vanilla;
  LossMode loss_mode = LossMode::hard;
  float lr = 0.0f;
  std::uint64_t seed = 0;
  double dev_f1 = 0.0;
  double test_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::size_t steps_to_best = 0;
  std::size_t train_size = 0;
  TrainHistory history;
  std::optional<Model> trained;
};

inline void check_prerequisites(Stage stage, const PipelineContext& ctx) {
  if (stage != Stage::vanilla && !ctx.teacher) {
    throw ConfigError(std::string("stage ") + stage_name(stage) + " needs a teacher");
  }
  if ((stage == Stage::kd_ulb || stage == Stage::kd_ulb_embed) && !ctx.pool) {
    throw ConfigError(std::string("stage ") + stage_name(stage) + " needs an unlabeled pool");
  }
  if (stage == Stage::kd_ulb_embed && (!ctx.embeddings || !ctx.vocab)) {
    throw ConfigError("stage kd_ulb_embed needs an embedding source");
  }
}

// Trains one student for one stage and evaluates it on dev and test.
inline StageResult run_stage(Stage stage, const ModelSpec& spec, const std::string& name, PipelineContext& ctx,
                             const DistillConfig& cfg) {
  check_prerequisites(stage, ctx);
  if (stage != Stage::vanilla && ctx.train_targets.size() != ctx.train.size()) ctx.compute_teacher_targets();
  Model student = build_model(spec, cfg.seed);
  StageResult r;
  r.model = name;
  r.stage = stage;
  r.lr = cfg.lr;
  r.seed = cfg.seed;
  TrainResult tr;
  if (stage == Stage::vanilla) {
    r.loss_mode = LossMode::hard;
    r.train_size = ctx.train.size();
    tr = train_vanilla(std::move(student), ctx.train, ctx.dev, cfg, ctx.info);
  } else {
    r.loss_mode = cfg.loss_mode;
    std::vector<Sample> pool = ctx.train;
    std::vector<SoftTarget> targets = ctx.train_targets;
    if (stage != Stage::kd) {
      pool.insert(pool.end(), ctx.pool->samples.begin(), ctx.pool->samples.end());
      targets.insert(targets.end(), ctx.pool->targets.begin(), ctx.pool->targets.end());
    }
    if (stage == Stage::kd_ulb_embed) initialize_student_embedding(student, *ctx.embeddings, *ctx.vocab, cfg.seed);
    r.train_size = pool.size();
    tr = train_student(std::move(student), pool, targets, ctx.dev, ctx.dev_targets, cfg, ctx.info);
  }
  r.history = tr.history;
  r.best_epoch = tr.history.best_epoch;
  r.steps_to_best = tr.history.steps_to_best;
  r.dev_f1 = evaluate_f1(tr.model, ctx.dev, ctx.info);
  r.test_f1 = evaluate_f1(tr.model, ctx.test, ctx.info);
  r.trained = std::move(tr.model);
  return r;
}

// Runs the listed stages in order for one student.
inline std::vector<StageResult> run_pipeline(std::span<const Stage> stages, const ModelSpec& spec,
                                             const std::string& name, PipelineContext& ctx,
                                             const DistillConfig& cfg) {
  for (Stage s : stages) check_prerequisites(s, ctx);
  std::vector<StageResult> out;
  for (Stage s : stages) out.push_back(run_stage(s, spec, name, ctx, cfg));
  return out;
}

// ---- Result rows -----------------------------------------------------------

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string format_lr(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(v));
  return buf;
}

inline const char* result_csv_header() {
  return "model,stage,loss_mode,lr,seed,dev_f1,test_f1,best_epoch,steps_to_best,train_size";
}

inline std::string result_csv_row(const StageResult& r) {
  return csv_row({r.model, stage_name(r.stage), loss_mode_name(r.loss_mode), format_lr(r.lr),
                  std::to_string(r.seed), format_metric(r.dev_f1), format_metric(r.test_f1),
                  std::to_string(r.best_epoch), std::to_string(r.steps_to_best), std::to_string(r.train_size)});
}

}  // namespace kdb
