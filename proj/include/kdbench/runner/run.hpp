#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kdbench/runner/config.hpp"
#include "kdbench/runner/hash.hpp"

namespace kdb {

// A failure inside one (student, stage, seed) cell.
class StageError : public Error {
 public:
  using Error::Error;
};

// ---- Result rows -----------------------------------------------------------

struct Provenance {
  std::string config_hash;
  std::string train_blob, dev_blob, test_blob;
};

// One line of a results CSV. Numeric fields are kept as written so a rerun
// compares byte for byte.
struct ResultRow {
  std::string model, stage, loss_mode, lr, seed, dev_f1, test_f1, best_epoch, steps_to_best, train_size;
  Provenance prov;
};

inline const char* results_header() {
  return "model,stage,loss_mode,lr,seed,dev_f1,test_f1,best_epoch,steps_to_best,train_size,"
         "config_hash,train_blob,dev_blob,test_blob";
}

inline std::string format_result_row(const ResultRow& r) {
  return csv_row({r.model, r.stage, r.loss_mode, r.lr, r.seed, r.dev_f1, r.test_f1, r.best_epoch, r.steps_to_best,
                  r.train_size, r.prov.config_hash, r.prov.train_blob, r.prov.dev_blob, r.prov.test_blob});
}

inline ResultRow make_result_row(const StageResult& s, const Provenance& p) {
  return {s.model,
          stage_name(s.stage),
          loss_mode_name(s.loss_mode),
          format_lr(s.lr),
          std::to_string(s.seed),
          format_metric(s.dev_f1),
          format_metric(s.test_f1),
          std::to_string(s.best_epoch),
          std::to_string(s.steps_to_best),
          std::to_string(s.train_size),
          p};
}

inline std::vector<ResultRow> parse_results_csv(std::string_view text) {
  const auto recs = detail::parse_csv(text);
  if (recs.empty()) throw FormatError("results: empty file");
  std::string header;
  for (std::size_t i = 0; i < recs[0].fields.size(); ++i) header += (i ? "," : "") + recs[0].fields[i];
  if (header != results_header()) throw FormatError("results: unexpected header", recs[0].line);
  std::vector<ResultRow> out;
  for (std::size_t k = 1; k < recs.size(); ++k) {
    const auto& f = recs[k].fields;
    if (f.size() != 14) throw FormatError("results: expected 14 fields", recs[k].line);
    out.push_back({f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[9], {f[10], f[11], f[12], f[13]}});
  }
  return out;
}

// ---- Summary ---------------------------------------------------------------

namespace detail {

inline double parse_double(const std::string& s, const char* field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError(std::string("results: bad ") + field + " '" + s + "'");
  }
}

inline int stage_rank(const std::string& stage) {
  if (stage == "teacher") return -1;
  return static_cast<int>(parse_stage(stage));
}

}  // namespace detail

// Teacher first, then each student block in ladder order; mean and
// population standard deviation over seeds.
inline std::string summary_markdown(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw ContractError("summary needs at least one result row");
  struct Cell {
    std::vector<double> dev, test;
  };
  std::vector<std::string> models;
  std::map<std::pair<std::string, int>, Cell> cells;
  for (const auto& r : rows) {
    const int rank = detail::stage_rank(r.stage);
    const std::string key = rank < 0 ? std::string("teacher") : r.model;
    if (std::find(models.begin(), models.end(), key) == models.end()) models.push_back(key);
    auto& c = cells[{key, rank}];
    c.dev.push_back(detail::parse_double(r.dev_f1, "dev_f1"));
    c.test.push_back(detail::parse_double(r.test_f1, "test_f1"));
  }
  std::stable_partition(models.begin(), models.end(), [](const std::string& m) { return m == "teacher"; });
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sd = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  auto num = [](double v) { return detail::fixed(v, 4); };
  std::string out = "| Model | Dev F1 | Test F1 | Test F1 sd | Seeds |\n|---|---:|---:|---:|---:|\n";
  auto line = [&](const std::string& label, const Cell& c) {
    out += "| " + label + " | " + num(mean(c.dev)) + " | " + num(mean(c.test)) + " | " + num(sd(c.test)) + " | " +
           std::to_string(c.test.size()) + " |\n";
  };
  auto dash = [&](const std::string& label) { out += "| " + label + " | - | - | - | - |\n"; };
  for (const auto& m : models) {
    if (m == "teacher") {
      line("Teacher", cells.at({m, -1}));
      continue;
    }
    if (auto it = cells.find({m, 0}); it != cells.end()) line(m, it->second);
    else dash(m);
    for (Stage s : all_stages) {
      if (s == Stage::vanilla) continue;
      if (auto it = cells.find({m, static_cast<int>(s)}); it != cells.end()) line(stage_label(s), it->second);
    }
  }
  return out;
}

// Collects results/*.csv in file-name order, teacher.csv first.
inline std::vector<ResultRow> read_results_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("results directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const bool ta = a.stem() == "teacher", tb = b.stem() == "teacher";
    return ta != tb ? ta : a.filename() < b.filename();
  });
  std::vector<ResultRow> rows;
  for (const auto& f : files) {
    auto part = parse_results_csv(read_file(f));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) throw ContractError("no result rows under " + dir.string());
  return rows;
}

inline std::string summary_document(const std::vector<ResultRow>& rows) {
  return "# Results\n\nMacro-F1 (classification) or the configured sequence-labeling F1, mean over seeds.\n\n" +
         summary_markdown(rows);
}

// ---- Running ---------------------------------------------------------------

struct RunOutput {
  std::vector<ResultRow> rows;
  std::filesystem::path dir;
};

namespace detail {

inline std::string config_hash(const ExperimentConfig& cfg) {
  Json j = config_to_json(cfg);
  j.erase("output");
  return sha1_hex(j.dump()).substr(0, 12);
}

inline Dataset prepare_dataset(const ExperimentConfig& cfg, const std::filesystem::path& out, Provenance& prov) {
  std::filesystem::path dir = cfg.data_dir;
  if (dir.empty()) {
    dir = out / "data";
    const Dataset d = cfg.task == Task::classification ? synth_classification(cfg.synth_cls)
                                                       : synth_sequence_labeling(cfg.synth_seqlab);
    save_dataset(dir, d);
  }
  const char* ext = cfg.task == Task::classification ? ".csv" : ".conll";
  prov.train_blob = git_blob_hash(read_file(dir / (std::string("train") + ext)));
  prov.dev_blob = git_blob_hash(read_file(dir / (std::string("dev") + ext)));
  prov.test_blob = git_blob_hash(read_file(dir / (std::string("test") + ext)));
  return load_dataset(dir, cfg.task);
}

inline UnlabeledPool collect_pool(const ExperimentConfig& cfg, const Dataset& d) {
  std::vector<PoolSource> sources;
  for (std::size_t i = 0; i < cfg.pool->sources.size(); ++i) {
    const auto& s = cfg.pool->sources[i];
    if (!s.file.empty()) {
      sources.push_back({std::filesystem::path(s.file).stem().string(), read_pool(s.file).texts});
      continue;
    }
    std::vector<std::string> texts;
    if (cfg.task == Task::classification) {
      const std::size_t lo = s.synth_min_len ? s.synth_min_len : cfg.synth_cls.min_len;
      const std::size_t hi = s.synth_max_len ? s.synth_max_len : cfg.synth_cls.max_len;
      texts = synth_classification_pool(cfg.synth_cls, s.synth_n, lo, hi, s.synth_seed);
    } else {
      const std::size_t lo = s.synth_min_len ? s.synth_min_len : cfg.synth_seqlab.min_len;
      const std::size_t hi = s.synth_max_len ? s.synth_max_len : cfg.synth_seqlab.max_len;
      texts = synth_seqlab_pool(cfg.synth_seqlab, s.synth_n, lo, hi, s.synth_seed);
    }
    sources.push_back({"synth" + std::to_string(i), std::move(texts)});
  }
  const auto train = train_texts(d);
  UnlabeledPool pool = exclude_texts(merge_pools(sources), train.texts);
  if (cfg.pool->length_filter != "none") {
    pool = filter_by_length(pool, parse_length_filter(cfg.pool->length_filter), length_stats(train.texts));
  }
  return pool;
}

inline std::string stage_tag(const std::string& model, const std::string& stage, std::uint64_t seed) {
  return "[" + model + " / " + stage + " / seed " + std::to_string(seed) + "] ";
}

// Trains one cell, choosing the learning rate by dev F1 when a search is configured.
inline StageResult run_cell(Stage stage, const StudentConfig& st, PipelineContext& ctx, const ExperimentConfig& cfg,
                            std::uint64_t seed) {
  DistillConfig dc = cfg.distill;
  dc.seed = seed;
  std::vector<StageResult> tried;
  auto trial = [&](float lr) {
    DistillConfig c = dc;
    c.lr = lr;
    tried.push_back(run_stage(stage, st.spec, st.name, ctx, c));
    return tried.back().dev_f1;
  };
  auto pick = [&](float lr, double f1) {
    for (auto& r : tried) {
      if (r.lr == lr && r.dev_f1 == f1) return std::move(r);
    }
    throw ContractError("lr selection lost its trial");
  };
  if (cfg.lr_search.trials > 0) {
    const auto res = lr_random_search(trial, cfg.lr_search.min, cfg.lr_search.max, cfg.lr_search.trials,
                                      seed * 1000003u + static_cast<std::uint64_t>(stage));
    return pick(res.best_lr, res.best_f1);
  }
  if (cfg.use_lr_grid && !dc.lr_grid.empty()) {
    float best_lr = 0.0f;
    double best = -1.0;
    for (float lr : dc.lr_grid) {
      const double f = trial(lr);
      if (f > best) {
        best = f;
        best_lr = lr;
      }
    }
    return pick(best_lr, best);
  }
  return run_stage(stage, st.spec, st.name, ctx, dc);
}

inline void write_rows(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  std::string text = std::string(results_header()) + '\n';
  for (const auto& r : rows) text += format_result_row(r);
  write_file(path, text);
}

inline std::string model_file(const std::string& name, const std::string& stage, std::uint64_t seed) {
  return name + "_" + stage + "_seed" + std::to_string(seed) + ".kdfz";
}

}  // namespace detail

// Runs every (seed, student, stage) cell and writes results/*.csv, summary.md,
// models/*.kdfz and, when enabled, cost/*.csv. Rows are written as they
// complete, so a failing cell leaves earlier rows on disk.
inline RunOutput cmd_run(const ExperimentConfig& cfg_in) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  RunOutput out;
  out.dir = cfg.output;
  const fs::path results_dir = out.dir / "results";
  const fs::path models_dir = out.dir / "models";
  fs::remove_all(results_dir);
  fs::create_directories(results_dir);
  fs::create_directories(models_dir);

  Provenance prov;
  prov.config_hash = detail::config_hash(cfg);
  const Dataset data = detail::prepare_dataset(cfg, out.dir, prov);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& e : data.train) corpus.push_back(e.tokens);
  const Vocab vocab = Vocab::build(corpus, cfg.vocab_max);

  PipelineContext ctx;
  ctx.info = task_info(data, cfg.seqlab_mode);
  ctx.vocab = &vocab;
  ctx.train = encode_split(data.train, vocab, data.task, cfg.max_len);
  ctx.dev = encode_split(data.dev, vocab, data.task, cfg.max_len);
  ctx.test = encode_split(data.test, vocab, data.task, cfg.max_len);

  const std::size_t classes = ctx.info.num_labels();
  bind_spec_to_data(cfg.teacher, vocab.size(), cfg.max_len, classes, data.task);
  for (auto& s : cfg.students) bind_spec_to_data(s.spec, vocab.size(), cfg.max_len, classes, data.task);
  detail::config_value("teacher", [&] {
    validate(cfg.teacher);
    return 0;
  });
  for (std::size_t i = 0; i < cfg.students.size(); ++i) {
    detail::config_value("students[" + std::to_string(i) + "].spec", [&] {
      validate(cfg.students[i].spec);
      return 0;
    });
  }

  std::optional<UnlabeledPool> pool;
  if (cfg.pool) pool = detail::collect_pool(cfg, data);
  std::optional<EmbeddingTable> vectors;
  if (cfg.embedding == EmbeddingSource::vectors_file) vectors = load_word_vectors(cfg.vectors_file);

  std::vector<ResultRow> teacher_rows;
  std::map<std::string, std::vector<ResultRow>> student_rows;
  std::optional<Model> bench_teacher;
  std::map<std::string, Model> bench_students;

  for (std::uint64_t seed : cfg.seeds) {
    DistillConfig tc = cfg.teacher_training;
    tc.seed = seed;
    Model teacher;
    try {
      TrainResult tr = fine_tune_teacher(cfg.teacher, ctx.train, ctx.dev, tc, ctx.info);
      teacher = std::move(tr.model);
      StageResult sr;
      sr.model = "teacher";
      sr.loss_mode = LossMode::hard;
      sr.lr = tc.lr;
      sr.seed = seed;
      sr.dev_f1 = evaluate_f1(teacher, ctx.dev, ctx.info);
      sr.test_f1 = evaluate_f1(teacher, ctx.test, ctx.info);
      sr.best_epoch = tr.history.best_epoch;
      sr.steps_to_best = tr.history.steps_to_best;
      sr.train_size = ctx.train.size();
      ResultRow row = make_result_row(sr, prov);
      row.stage = "teacher";
      teacher_rows.push_back(row);
      detail::write_rows(results_dir / "teacher.csv", teacher_rows);
      export_frozen(teacher, models_dir / detail::model_file("teacher", "teacher", seed), Precision::f32);
    } catch (const Error& e) {
      throw StageError(detail::stage_tag("teacher", "teacher", seed) + e.what());
    }
    if (!bench_teacher) bench_teacher = teacher;

    ctx.teacher = &teacher;
    ctx.train_targets.clear();
    ctx.dev_targets.clear();
    PseudoLabeledSet pseudo;
    EmbeddingTable teacher_table(1);
    try {
      ctx.compute_teacher_targets();
      if (pool) {
        pseudo = pseudo_label(teacher, *pool, vocab);
        if (cfg.pool->balance != "none") {
          pseudo = balance_pool(pseudo, parse_balance(cfg.pool->balance, cfg.pool->balance_target), seed);
        }
        ctx.pool = &pseudo;
      }
      if (cfg.embedding == EmbeddingSource::teacher_embed) {
        teacher_table = extract_teacher_embeddings(teacher, vocab);
        ctx.embeddings = &teacher_table;
      } else if (vectors) {
        ctx.embeddings = &*vectors;
      }
    } catch (const Error& e) {
      throw StageError(detail::stage_tag("teacher", "pseudo_label", seed) + e.what());
    }

    for (const auto& st : cfg.students) {
      for (Stage stage : cfg.stages) {
        StageResult r;
        try {
          r = detail::run_cell(stage, st, ctx, cfg, seed);
          export_frozen(*r.trained, models_dir / detail::model_file(st.name, stage_name(stage), seed), Precision::f32);
        } catch (const Error& e) {
          throw StageError(detail::stage_tag(st.name, stage_name(stage), seed) + e.what());
        }
        auto& rows = student_rows[st.name];
        rows.push_back(make_result_row(r, prov));
        detail::write_rows(results_dir / (st.name + ".csv"), rows);
        bench_students.insert_or_assign(st.name, std::move(*r.trained));
      }
    }
    ctx.teacher = nullptr;
    ctx.pool = nullptr;
    ctx.embeddings = nullptr;
  }

  out.rows = teacher_rows;
  for (const auto& st : cfg.students) {
    auto it = student_rows.find(st.name);
    if (it != student_rows.end()) out.rows.insert(out.rows.end(), it->second.begin(), it->second.end());
  }
  write_file(out.dir / "summary.md", summary_document(read_results_dir(results_dir)));

  if (cfg.bench.enabled) {
    std::vector<CostReport> reports;
    auto cost = [&](const std::string& name, Model& m) {
      CostReport r;
      r.model = name;
      r.params = count_parameters(m);
      r.file_bytes_f32 = frozen_file_size(freeze(m, Precision::f32));
      r.file_bytes_int8 = frozen_file_size(freeze(m, Precision::int8));
      r.live = bench_live(m, cfg.bench.options);
      FrozenSession session(freeze(m, Precision::f32));
      r.frozen = bench_latency(session, cfg.bench.options);
      reports.push_back(std::move(r));
    };
    cost("teacher", *bench_teacher);
    for (const auto& st : cfg.students) {
      if (auto it = bench_students.find(st.name); it != bench_students.end()) cost(st.name, it->second);
    }
    write_file(out.dir / "cost" / "cost.csv", cost_table_csv(reports));
    write_file(out.dir / "cost" / "cost.md", cost_table_markdown(reports));
  }
  return out;
}

}  // namespace kdb
