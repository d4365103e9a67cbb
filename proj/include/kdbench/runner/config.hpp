#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kdbench/augment/augment.hpp"
#include "kdbench/bench/bench.hpp"
#include "kdbench/data/synth.hpp"
#include "kdbench/distill/pipeline.hpp"
#include "kdbench/models/spec_json.hpp"

namespace kdb {

struct StudentConfig {
  std::string name;
  ModelSpec spec;
};

// One source of unlabeled text: a file with one text per line, or generated text.
struct PoolSourceConfig {
  std::string file;
  std::size_t synth_n = 0;
  std::size_t synth_min_len = 0;
  std::size_t synth_max_len = 0;
  std::uint64_t synth_seed = 0;
};

struct PoolConfig {
  std::vector<PoolSourceConfig> sources;
  std::string balance = "none";  // none | median_cap | target_oversample
  std::size_t balance_target = 0;
  std::string length_filter = "none";  // none | min_max | q1_q3
};

enum class EmbeddingSource { none, vectors_file, teacher_embed };

struct LrSearchConfig {
  std::size_t trials = 0;
  float min = 5e-5f;
  float max = 1e-2f;
};

struct BenchConfig {
  bool enabled = false;
  BenchOptions options;
};

struct ExperimentConfig {
  Task task = Task::classification;
  std::string data_dir;  // empty: synthetic data
  SynthClassificationConfig synth_cls;
  SynthSeqLabConfig synth_seqlab;
  SeqLabMode seqlab_mode = SeqLabMode::token_macro;
  std::size_t max_len = 32;
  std::size_t vocab_max = 0;  // 0: unlimited
  ModelSpec teacher;
  DistillConfig teacher_training;
  std::vector<StudentConfig> students;
  std::vector<Stage> stages;
  DistillConfig distill;
  LrSearchConfig lr_search;
  bool use_lr_grid = false;
  std::optional<PoolConfig> pool;
  EmbeddingSource embedding = EmbeddingSource::none;
  std::string vectors_file;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output = "out";
  BenchConfig bench;

  void validate() const;
};

inline const char* embedding_source_name(EmbeddingSource e) {
  switch (e) {
    case EmbeddingSource::none: return "none";
    case EmbeddingSource::vectors_file: return "vectors_file";
    case EmbeddingSource::teacher_embed: return "teacher_embed";
  }
  return "?";
}

namespace detail {

template <class Fn>
auto config_value(const std::string& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

inline std::size_t embed_dim_of(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.embed_dim; }, spec);
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("'seeds' must not be empty");
  if (students.empty() && !stages.empty()) throw ConfigError("'students' must not be empty");
  if (max_len == 0) throw ConfigError("'max_len' must be positive");
  if (output.empty()) throw ConfigError("'output' must not be empty");
  std::vector<std::string> names;
  for (std::size_t i = 0; i < students.size(); ++i) {
    const auto& n = students[i].name;
    if (n.empty() || n == "teacher" || n.find_first_of("/\\ ,") != std::string::npos) {
      throw ConfigError("'students[" + std::to_string(i) + "].name' must be a plain identifier other than 'teacher'");
    }
    if (std::find(names.begin(), names.end(), n) != names.end()) {
      throw ConfigError("'students[" + std::to_string(i) + "].name' duplicates '" + n + "'");
    }
    names.push_back(n);
  }
  for (Stage s : stages) {
    if ((s == Stage::kd_ulb || s == Stage::kd_ulb_embed) && !pool) {
      throw ConfigError(std::string("stage ") + stage_name(s) + " requires 'pool'");
    }
    if (s == Stage::kd_ulb_embed && embedding == EmbeddingSource::none) {
      throw ConfigError("stage kd_ulb_embed requires 'embedding'");
    }
  }
  if (pool) {
    if (pool->sources.empty()) throw ConfigError("'pool.sources' must not be empty");
    if (pool->balance != "none") {
      if (task != Task::classification) throw ConfigError("'pool.balance' applies to classification only");
      detail::config_value("pool.balance", [&] { return parse_balance(pool->balance, pool->balance_target); });
    }
    if (pool->length_filter != "none") {
      detail::config_value("pool.length_filter", [&] { return parse_length_filter(pool->length_filter); });
    }
  }
  if (embedding == EmbeddingSource::vectors_file && vectors_file.empty()) {
    throw ConfigError("'embedding.path' is required for vectors_file");
  }
  if (embedding == EmbeddingSource::teacher_embed) {
    for (std::size_t i = 0; i < students.size(); ++i) {
      if (detail::embed_dim_of(students[i].spec) != detail::embed_dim_of(teacher)) {
        throw ConfigError("'students[" + std::to_string(i) + "].spec.embed_dim' must equal the teacher's for teacher_embed");
      }
    }
  }
  detail::config_value("distill", [&] {
    distill.validate();
    return 0;
  });
  detail::config_value("teacher_training", [&] {
    teacher_training.validate();
    return 0;
  });
  if (lr_search.trials > 0 && !(lr_search.min > 0.0f && lr_search.max > lr_search.min)) {
    throw ConfigError("'lr_search' bounds must satisfy 0 < min < max");
  }
  if (bench.enabled) {
    if (bench.options.iterations == 0) throw ConfigError("'bench.iterations' must be at least 1");
    for (auto L : bench.options.lengths) {
      if (L == 0 || L > max_len) throw ConfigError("'bench.lengths' entries must lie in [1, max_len]");
    }
  }
}

namespace detail {

inline DistillConfig read_training(JsonObject o, DistillConfig base) {
  std::string loss = loss_mode_name(base.loss_mode);
  o.optional("loss", loss);
  base.loss_mode = config_value(o.path_of("loss"), [&] { return parse_loss_mode(loss); });
  o.optional("temperature", base.temperature);
  o.optional("lr", base.lr);
  o.optional("lr_grid", base.lr_grid);
  o.optional("patience", base.patience);
  o.optional("max_epochs", base.max_epochs);
  o.optional("batch_size", base.batch_size);
  o.optional("warmup_steps", base.warmup_steps);
  o.finish();
  return base;
}

inline Json training_json(const DistillConfig& c) {
  return {{"loss", loss_mode_name(c.loss_mode)}, {"temperature", c.temperature}, {"lr", c.lr},
          {"lr_grid", c.lr_grid},                {"patience", c.patience},       {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},          {"warmup_steps", c.warmup_steps}};
}

inline void read_synth(JsonObject o, ExperimentConfig& c) {
  auto common = [&](auto& s) {
    o.optional("seed", s.seed);
    o.optional("n_train", s.n_train);
    o.optional("n_dev", s.n_dev);
    o.optional("n_test", s.n_test);
    o.optional("vocab_size", s.vocab_size);
    o.optional("min_len", s.min_len);
    o.optional("max_len", s.max_len);
    o.optional("noise", s.noise);
  };
  if (c.task == Task::classification) {
    auto& s = c.synth_cls;
    common(s);
    o.optional("n_classes", s.n_classes);
    o.optional("markers_per_class", s.markers_per_class);
    o.optional("max_markers", s.max_markers);
    o.optional("noisy_test", s.noisy_test);
    o.finish();
    config_value("data.synth", [&] {
      s.validate();
      return 0;
    });
  } else {
    auto& s = c.synth_seqlab;
    common(s);
    o.optional("n_entity_types", s.n_entity_types);
    o.optional("lexicon_size", s.lexicon_size);
    o.optional("max_entities", s.max_entities);
    o.optional("max_span", s.max_span);
    o.optional("tag_noise", s.tag_noise);
    o.finish();
    config_value("data.synth", [&] {
      s.validate();
      return 0;
    });
  }
}

inline Json synth_json(const ExperimentConfig& c) {
  Json j;
  auto common = [&](const auto& s) {
    j["seed"] = s.seed;
    j["n_train"] = s.n_train;
    j["n_dev"] = s.n_dev;
    j["n_test"] = s.n_test;
    j["vocab_size"] = s.vocab_size;
    j["min_len"] = s.min_len;
    j["max_len"] = s.max_len;
    j["noise"] = s.noise;
  };
  if (c.task == Task::classification) {
    const auto& s = c.synth_cls;
    common(s);
    j["n_classes"] = s.n_classes;
    j["markers_per_class"] = s.markers_per_class;
    j["max_markers"] = s.max_markers;
    j["noisy_test"] = s.noisy_test;
  } else {
    const auto& s = c.synth_seqlab;
    common(s);
    j["n_entity_types"] = s.n_entity_types;
    j["lexicon_size"] = s.lexicon_size;
    j["max_entities"] = s.max_entities;
    j["max_span"] = s.max_span;
    j["tag_noise"] = s.tag_noise;
  }
  return j;
}

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

// Strict parse: unknown keys and type mismatches are errors naming the key path.
// Relative paths are resolved against `base_dir`.
inline ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig c;
  JsonObject o(j, "");
  const auto task = o.required<std::string>("task");
  c.task = detail::config_value("task", [&] { return parse_task(task); });
  {
    auto d = o.object("data");
    d.optional("dir", c.data_dir);
    c.data_dir = detail::resolve_path(c.data_dir, base_dir);
    if (d.has("synth")) {
      if (!c.data_dir.empty()) throw ConfigError("'data' takes either 'dir' or 'synth', not both");
      detail::read_synth(d.object("synth"), c);
    } else if (c.data_dir.empty()) {
      throw ConfigError("'data' needs 'dir' or 'synth'");
    }
    std::string mode = seqlab_mode_name(c.seqlab_mode);
    d.optional("seqlab_metric", mode);
    if (mode == "entity") c.seqlab_mode = SeqLabMode::entity;
    else if (mode == "token_macro") c.seqlab_mode = SeqLabMode::token_macro;
    else throw ConfigError("'data.seqlab_metric' must be entity or token_macro");
    d.finish();
  }
  o.optional("max_len", c.max_len);
  o.optional("vocab_max", c.vocab_max);
  c.teacher = spec_from_json(o.raw("teacher"), "teacher");
  if (o.has("teacher_training")) c.teacher_training = detail::read_training(o.object("teacher_training"), c.teacher_training);
  if (o.has("students")) {
    const Json& arr = o.raw("students");
    if (!arr.is_array()) throw ConfigError("'students' must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = "students[" + std::to_string(i) + "]";
      JsonObject s(arr[i], path);
      StudentConfig sc;
      sc.spec = spec_from_json(s.raw("spec"), path + ".spec");
      sc.name = family_name(family_of(sc.spec));
      s.optional("name", sc.name);
      s.finish();
      c.students.push_back(std::move(sc));
    }
  }
  std::vector<std::string> stages;
  o.optional("stages", stages);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    c.stages.push_back(detail::config_value("stages[" + std::to_string(i) + "]", [&] { return parse_stage(stages[i]); }));
  }
  if (o.has("distill")) c.distill = detail::read_training(o.object("distill"), c.distill);
  if (o.has("lr_search")) {
    auto l = o.object("lr_search");
    l.optional("trials", c.lr_search.trials);
    l.optional("min", c.lr_search.min);
    l.optional("max", c.lr_search.max);
    l.finish();
  }
  o.optional("use_lr_grid", c.use_lr_grid);
  if (o.has("pool")) {
    auto p = o.object("pool");
    PoolConfig pc;
    const Json& src = p.raw("sources");
    if (!src.is_array()) throw ConfigError("'pool.sources' must be an array");
    for (std::size_t i = 0; i < src.size(); ++i) {
      JsonObject s(src[i], "pool.sources[" + std::to_string(i) + "]");
      PoolSourceConfig sc;
      s.optional("file", sc.file);
      sc.file = detail::resolve_path(sc.file, base_dir);
      if (s.has("synth")) {
        auto g = s.object("synth");
        sc.synth_n = g.required<std::size_t>("n");
        g.optional("min_len", sc.synth_min_len);
        g.optional("max_len", sc.synth_max_len);
        g.optional("seed", sc.synth_seed);
        g.finish();
        if (sc.synth_n == 0) throw ConfigError("'" + g.path_of("n") + "' must be positive");
      }
      if (sc.file.empty() == (sc.synth_n == 0)) {
        throw ConfigError("'pool.sources[" + std::to_string(i) + "]' needs exactly one of 'file' or 'synth'");
      }
      s.finish();
      pc.sources.push_back(std::move(sc));
    }
    p.optional("balance", pc.balance);
    p.optional("balance_target", pc.balance_target);
    p.optional("length_filter", pc.length_filter);
    p.finish();
    c.pool = std::move(pc);
  }
  if (o.has("embedding")) {
    auto e = o.object("embedding");
    const auto src = e.required<std::string>("source");
    if (src == "none") c.embedding = EmbeddingSource::none;
    else if (src == "vectors_file") c.embedding = EmbeddingSource::vectors_file;
    else if (src == "teacher_embed") c.embedding = EmbeddingSource::teacher_embed;
    else throw ConfigError("'embedding.source' must be none, vectors_file or teacher_embed");
    e.optional("path", c.vectors_file);
    c.vectors_file = detail::resolve_path(c.vectors_file, base_dir);
    e.finish();
  }
  o.optional("seeds", c.seeds);
  o.optional("output", c.output);
  c.output = detail::resolve_path(c.output, base_dir);
  if (o.has("bench")) {
    auto b = o.object("bench");
    c.bench.enabled = true;
    b.optional("enabled", c.bench.enabled);
    b.optional("lengths", c.bench.options.lengths);
    b.optional("iterations", c.bench.options.iterations);
    b.optional("warmup", c.bench.options.warmup);
    b.finish();
  }
  o.finish();
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

// Canonical form: every field spelled out, keys sorted.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["task"] = task_name(c.task);
  Json data;
  if (c.data_dir.empty()) data["synth"] = detail::synth_json(c);
  else data["dir"] = c.data_dir;
  data["seqlab_metric"] = seqlab_mode_name(c.seqlab_mode);
  j["data"] = data;
  j["max_len"] = c.max_len;
  j["vocab_max"] = c.vocab_max;
  j["teacher"] = spec_to_json(c.teacher);
  j["teacher_training"] = detail::training_json(c.teacher_training);
  j["students"] = Json::array();
  for (const auto& s : c.students) j["students"].push_back({{"name", s.name}, {"spec", spec_to_json(s.spec)}});
  j["stages"] = Json::array();
  for (Stage s : c.stages) j["stages"].push_back(stage_name(s));
  j["distill"] = detail::training_json(c.distill);
  j["lr_search"] = {{"trials", c.lr_search.trials}, {"min", c.lr_search.min}, {"max", c.lr_search.max}};
  j["use_lr_grid"] = c.use_lr_grid;
  if (c.pool) {
    Json p;
    p["sources"] = Json::array();
    for (const auto& s : c.pool->sources) {
      if (!s.file.empty()) {
        p["sources"].push_back({{"file", s.file}});
      } else {
        p["sources"].push_back(
            {{"synth", {{"n", s.synth_n}, {"min_len", s.synth_min_len}, {"max_len", s.synth_max_len}, {"seed", s.synth_seed}}}});
      }
    }
    p["balance"] = c.pool->balance;
    p["balance_target"] = c.pool->balance_target;
    p["length_filter"] = c.pool->length_filter;
    j["pool"] = p;
  }
  Json e = {{"source", embedding_source_name(c.embedding)}};
  if (!c.vectors_file.empty()) e["path"] = c.vectors_file;
  j["embedding"] = e;
  j["seeds"] = c.seeds;
  j["output"] = c.output;
  j["bench"] = {{"enabled", c.bench.enabled},
                {"lengths", c.bench.options.lengths},
                {"iterations", c.bench.options.iterations},
                {"warmup", c.bench.options.warmup}};
  return j;
}

}  // namespace kdb
