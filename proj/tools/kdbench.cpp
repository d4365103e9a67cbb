#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kdbench/runner/run.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision = "f32";
  std::string loss;
  std::string stage;
  std::size_t trials = 20;
  double min = 5e-5;
  double max = 1e-2;
  std::string model;
  std::string task = "cls";
  std::size_t iterations = 100;
  std::size_t warmup = 10;
  std::vector<std::size_t> lengths;
  bool live = true;
};

kdb::ExperimentConfig load_config(const Options& o) {
  auto cfg = kdb::parse_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.output = o.out;
  if (!o.loss.empty()) cfg.distill.loss_mode = kdb::parse_loss_mode(o.loss);
  if (!o.stage.empty()) cfg.stages = {kdb::parse_stage(o.stage)};
  cfg.validate();
  return cfg;
}

void print_rows(const std::vector<kdb::ResultRow>& rows) {
  std::cout << kdb::results_header() << '\n';
  for (const auto& r : rows) std::cout << kdb::format_result_row(r);
}

int cmd_synth(const Options& o) {
  const auto task = kdb::parse_task(o.task);
  const std::uint64_t seed = o.seed.value_or(0);
  kdb::Dataset d;
  if (task == kdb::Task::classification) {
    kdb::SynthClassificationConfig c;
    c.seed = seed;
    d = kdb::synth_classification(c);
  } else {
    kdb::SynthSeqLabConfig c;
    c.seed = seed;
    d = kdb::synth_sequence_labeling(c);
  }
  kdb::save_dataset(o.out, d);
  std::cout << "wrote " << d.train.size() << "/" << d.dev.size() << "/" << d.test.size()
            << " train/dev/test examples to " << o.out << '\n';
  return 0;
}

int cmd_train_teacher(const Options& o) {
  auto cfg = load_config(o);
  cfg.stages.clear();
  cfg.students.clear();
  cfg.pool.reset();
  cfg.embedding = kdb::EmbeddingSource::none;
  print_rows(kdb::cmd_run(cfg).rows);
  return 0;
}

int cmd_distill(const Options& o) {
  const auto cfg = load_config(o);
  const auto res = kdb::cmd_run(cfg);
  print_rows(res.rows);
  std::cout << '\n' << kdb::read_file(res.dir / "summary.md");
  return 0;
}

int cmd_augment(const Options& o) {
  auto cfg = load_config(o);
  if (!cfg.pool) throw kdb::ConfigError("augment needs 'pool' in the config");
  kdb::Provenance prov;
  const fs::path out = cfg.output;
  const auto data = kdb::detail::prepare_dataset(cfg, out, prov);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& e : data.train) corpus.push_back(e.tokens);
  const auto vocab = kdb::Vocab::build(corpus, cfg.vocab_max);
  const auto info = kdb::task_info(data, cfg.seqlab_mode);
  const std::uint64_t seed = cfg.seeds.front();
  kdb::Model teacher;
  if (!o.model.empty()) {
    teacher = kdb::thaw(kdb::load_frozen(o.model));
    if (teacher.vocab_size() != vocab.size()) throw kdb::ConfigError("teacher vocabulary does not match the data");
  } else {
    kdb::ModelSpec spec = cfg.teacher;
    kdb::bind_spec_to_data(spec, vocab.size(), cfg.max_len, info.num_labels(), data.task);
    kdb::DistillConfig tc = cfg.teacher_training;
    tc.seed = seed;
    const auto train = kdb::encode_split(data.train, vocab, data.task, cfg.max_len);
    const auto dev = kdb::encode_split(data.dev, vocab, data.task, cfg.max_len);
    teacher = kdb::fine_tune_teacher(spec, train, dev, tc, info).model;
  }
  const auto pool = kdb::detail::collect_pool(cfg, data);
  auto set = kdb::pseudo_label(teacher, pool, vocab);
  if (cfg.pool->balance != "none") {
    set = kdb::balance_pool(set, kdb::parse_balance(cfg.pool->balance, cfg.pool->balance_target), seed);
  }
  kdb::write_pool(out / "pool.txt", kdb::make_pool(set.texts));
  kdb::write_file(out / "pseudo_labels.csv", kdb::format_pseudo_labels(set));
  std::cout << "pseudo-labeled " << set.size() << " texts\n";
  if (data.task == kdb::Task::classification) {
    const auto st = kdb::pool_stats(set);
    for (const auto& [label, n] : st.counts) std::cout << "  " << info.labels.at(label) << ": " << n << '\n';
    std::printf("  std: %.2f\n", st.std);
  }
  return 0;
}

int cmd_export(const Options& o) {
  if (o.model.empty() || o.out.empty()) throw CLI::ValidationError("export", "--model and --out are required");
  const auto fm = kdb::load_frozen(o.model);
  const auto prec = kdb::parse_precision(o.precision);
  const auto out = kdb::export_frozen(kdb::thaw(fm), o.out, prec);
  std::cout << "wrote " << o.out << " (" << kdb::precision_name(prec) << ", " << kdb::frozen_file_size(out)
            << " bytes, " << out.parameter_count() << " parameters)\n";
  return 0;
}

int cmd_bench(const Options& o) {
  if (o.model.empty()) throw CLI::ValidationError("bench", "--model is required");
  const auto fm = kdb::load_frozen(o.model);
  kdb::Model live = kdb::thaw(fm);
  kdb::BenchOptions opt;
  if (!o.lengths.empty()) opt.lengths = o.lengths;
  opt.iterations = o.iterations;
  opt.warmup = o.warmup;
  opt.seed = o.seed.value_or(0);
  std::vector<std::size_t> fitting;
  for (auto L : opt.lengths) {
    if (L <= live.max_len()) fitting.push_back(L);
  }
  if (fitting.empty()) throw kdb::ParameterError("no bench length fits the model's max_len");
  opt.lengths = fitting;
  kdb::CostReport r;
  r.model = fs::path(o.model).stem().string();
  r.params = kdb::count_parameters(live);
  r.file_bytes_f32 = kdb::frozen_file_size(kdb::freeze(live, kdb::Precision::f32));
  r.file_bytes_int8 = kdb::frozen_file_size(kdb::freeze(live, kdb::Precision::int8));
  if (o.live) r.live = kdb::bench_live(live, opt);
  kdb::FrozenSession session(fm);
  r.frozen = kdb::bench_latency(session, opt);
  const std::vector<kdb::CostReport> reports = {r};
  if (!o.out.empty()) {
    kdb::write_file(fs::path(o.out) / (r.model + ".csv"), kdb::cost_table_csv(reports));
    kdb::write_file(fs::path(o.out) / (r.model + ".md"), kdb::cost_table_markdown(reports));
  }
  std::cout << kdb::cost_table_markdown(reports);
  return 0;
}

int cmd_search_lr(const Options& o) {
  auto cfg = load_config(o);
  if (cfg.students.empty() || cfg.stages.empty()) throw kdb::ConfigError("search-lr needs a student and a stage");
  cfg.students.resize(1);
  cfg.stages.resize(1);
  cfg.seeds.resize(1);
  cfg.lr_search.trials = o.trials;
  cfg.lr_search.min = static_cast<float>(o.min);
  cfg.lr_search.max = static_cast<float>(o.max);
  cfg.use_lr_grid = false;
  cfg.bench.enabled = false;
  cfg.validate();
  const auto res = kdb::cmd_run(cfg);
  const auto& best = res.rows.back();
  std::cout << "search range [" << kdb::format_lr(cfg.lr_search.min) << ", " << kdb::format_lr(cfg.lr_search.max)
            << "], " << o.trials << " trials\n";
  std::cout << "best lr " << best.lr << " dev_f1 " << best.dev_f1 << " test_f1 " << best.test_f1 << '\n';
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  const auto rows = kdb::read_results_dir(dir / "results");
  const auto doc = kdb::summary_document(rows);
  kdb::write_file(dir / "summary.md", doc);
  std::cout << doc;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-distillation benchmark: teachers, students, augmentation, export and latency"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Random seed (overrides the config seed list)");
    c->add_option("--out", o.out, "Output directory or file");
  };
  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    add_common(c);
  };
  const std::vector<std::string> losses = {"mse", "kld", "hard"};
  const std::vector<std::string> precisions = {"f32", "f16", "int8"};

  auto* synth = app.add_subcommand("synth", "Write a synthetic train/dev/test dataset");
  synth->add_option("--task", o.task, "cls or seqlab")->check(CLI::IsMember({"cls", "classification", "seqlab", "ner", "sequence_labeling"}));
  add_common(synth);
  synth->get_option("--out")->required();

  auto* teacher = app.add_subcommand("train-teacher", "Fine-tune the teacher and export it");
  add_config(teacher);

  auto* distill = app.add_subcommand("distill", "Run the distillation ladder for every student");
  add_config(distill);
  distill->add_option("--loss", o.loss, "Distillation loss")->check(CLI::IsMember(losses));
  distill->add_option("--stage", o.stage, "Run a single stage")
      ->check(CLI::IsMember({"vanilla", "kd", "kd_ulb", "kd_ulb_embed"}));

  auto* augment = app.add_subcommand("augment", "Pseudo-label the unlabeled pool with the teacher");
  add_config(augment);
  augment->add_option("--model", o.model, "Frozen teacher to use instead of training one")->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "Measure single-sentence CPU latency of a frozen model");
  bench->add_option("--model", o.model, "Frozen model file")->required()->check(CLI::ExistingFile);
  bench->add_option("--iterations", o.iterations, "Timed runs per length")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", o.warmup, "Discarded runs per length");
  bench->add_option("--lengths", o.lengths, "Sentence lengths")->delimiter(',');
  bench->add_flag("!--no-live", o.live, "Skip the live (tape-enabled) comparison");
  add_common(bench);

  auto* exp = app.add_subcommand("export", "Re-export a frozen model at another precision");
  exp->add_option("--model", o.model, "Frozen model file")->required()->check(CLI::ExistingFile);
  exp->add_option("--precision", o.precision, "Stored precision")->check(CLI::IsMember(precisions));
  add_common(exp);
  exp->get_option("--out")->required();

  auto* search = app.add_subcommand("search-lr", "Random learning-rate search for the first student and stage");
  add_config(search);
  search->add_option("--trials", o.trials, "Number of trials")->check(CLI::PositiveNumber);
  search->add_option("--min", o.min, "Lower bound")->check(CLI::PositiveNumber);
  search->add_option("--max", o.max, "Upper bound")->check(CLI::PositiveNumber);
  search->add_option("--loss", o.loss, "Distillation loss")->check(CLI::IsMember(losses));
  search->add_option("--stage", o.stage, "Stage to tune")->check(CLI::IsMember({"vanilla", "kd", "kd_ulb", "kd_ulb_embed"}));

  auto* report = app.add_subcommand("report", "Rebuild summary.md from results/*.csv");
  report->add_option("--out", o.out, "Run directory holding results/");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*teacher) return cmd_train_teacher(o);
    if (*distill) return cmd_distill(o);
    if (*augment) return cmd_augment(o);
    if (*bench) return cmd_bench(o);
    if (*exp) return cmd_export(o);
    if (*search) return cmd_search_lr(o);
    if (*report) return cmd_report(o);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
