#include <gtest/gtest.h>

#include "kdbench/data/synth.hpp"
#include "kdbench/distill/pipeline.hpp"

namespace {

struct Setup {
  kdb::Dataset data;
  kdb::Vocab vocab;
  kdb::PipelineContext ctx;
  kdb::PseudoLabeledSet pool;
  kdb::EmbeddingTable table{16};
  std::optional<kdb::Model> teacher;
};

constexpr std::size_t kLen = 20;

std::unique_ptr<Setup> make_setup() {
  auto s = std::make_unique<Setup>();
  kdb::SynthClassificationConfig c;
  c.seed = 5;
  c.n_train = 120;
  c.n_dev = 40;
  c.n_test = 60;
  c.n_classes = 2;
  c.vocab_size = 50;
  s->data = kdb::synth_classification(c);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& e : s->data.train) corpus.push_back(e.tokens);
  s->vocab = kdb::Vocab::build(corpus);
  auto& ctx = s->ctx;
  ctx.info = kdb::task_info(s->data);
  ctx.vocab = &s->vocab;
  ctx.train = kdb::encode_split(s->data.train, s->vocab, s->data.task, kLen);
  ctx.dev = kdb::encode_split(s->data.dev, s->vocab, s->data.task, kLen);
  ctx.test = kdb::encode_split(s->data.test, s->vocab, s->data.task, kLen);

  kdb::DistillConfig tc;
  tc.max_epochs = 8;
  tc.seed = 1;
  auto tspec = kdb::TransformerSpec::preset(2, 1, 16, s->vocab.size(), kLen, 2, kdb::Task::classification);
  s->teacher = kdb::fine_tune_teacher(tspec, ctx.train, ctx.dev, tc, ctx.info).model;
  ctx.teacher = &*s->teacher;
  ctx.compute_teacher_targets();

  auto texts = kdb::synth_classification_pool(c, 30, c.min_len, c.max_len, 99);
  auto pool = kdb::exclude_texts(kdb::make_pool(texts), kdb::train_texts(s->data).texts);
  s->pool = kdb::pseudo_label(*s->teacher, pool, s->vocab);
  ctx.pool = &s->pool;

  s->table = kdb::extract_teacher_embeddings(*s->teacher, s->vocab);
  ctx.embeddings = &s->table;
  return s;
}

kdb::ModelSpec student_spec(const Setup& s) {
  kdb::CnnSpec c;
  c.vocab_size = s.vocab.size();
  c.max_len = kLen;
  c.num_classes = 2;
  c.embed_dim = 16;
  c.n_blocks = 1;
  return c;
}

kdb::DistillConfig small_cfg() {
  kdb::DistillConfig cfg;
  cfg.max_epochs = 4;
  cfg.seed = 3;
  return cfg;
}

TEST(Pipeline, StageNamesRoundTrip) {
  for (auto s : kdb::all_stages) EXPECT_EQ(kdb::parse_stage(kdb::stage_name(s)), s);
  EXPECT_THROW(kdb::parse_stage("kd-ulb"), kdb::ParameterError);
}

TEST(Pipeline, MissingPrerequisitesAreConfigErrors) {
  kdb::PipelineContext ctx;
  kdb::CnnSpec c;
  c.vocab_size = 10;
  EXPECT_THROW(kdb::run_stage(kdb::Stage::kd, c, "cnn", ctx, small_cfg()), kdb::ConfigError);
  auto s = make_setup();
  s->ctx.pool = nullptr;
  EXPECT_THROW(kdb::run_stage(kdb::Stage::kd_ulb, student_spec(*s), "cnn", s->ctx, small_cfg()), kdb::ConfigError);
  s->ctx.pool = &s->pool;
  s->ctx.embeddings = nullptr;
  EXPECT_THROW(kdb::run_pipeline(kdb::all_stages, student_spec(*s), "cnn", s->ctx, small_cfg()), kdb::ConfigError);
}

TEST(Pipeline, LadderRowsAndPoolSizes) {
  auto s = make_setup();
  ASSERT_GT(s->pool.size(), 0u);
  auto rows = kdb::run_pipeline(kdb::all_stages, student_spec(*s), "cnn", s->ctx, small_cfg());
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].stage, kdb::all_stages[i]);
    EXPECT_GE(rows[i].test_f1, 0.0);
    EXPECT_LE(rows[i].test_f1, 1.0);
    EXPECT_LE(rows[i].best_epoch, 4u);
    EXPECT_TRUE(rows[i].trained.has_value());
  }
  EXPECT_EQ(rows[0].loss_mode, kdb::LossMode::hard);
  EXPECT_EQ(rows[1].loss_mode, kdb::LossMode::mse);
  EXPECT_EQ(rows[0].train_size, s->ctx.train.size());
  EXPECT_EQ(rows[1].train_size, s->ctx.train.size());
  EXPECT_EQ(rows[2].train_size, s->ctx.train.size() + s->pool.size());
  EXPECT_EQ(rows[3].train_size, rows[2].train_size);
}

TEST(Pipeline, RerunIsDeterministic) {
  auto s = make_setup();
  auto a = kdb::run_stage(kdb::Stage::kd_ulb_embed, student_spec(*s), "cnn", s->ctx, small_cfg());
  auto b = kdb::run_stage(kdb::Stage::kd_ulb_embed, student_spec(*s), "cnn", s->ctx, small_cfg());
  EXPECT_EQ(kdb::result_csv_row(a), kdb::result_csv_row(b));
  EXPECT_EQ(a.history, b.history);
}

TEST(Pipeline, CsvRowMatchesHeader) {
  kdb::StageResult r;
  r.model = "bilstm";
  r.stage = kdb::Stage::kd_ulb;
  r.loss_mode = kdb::LossMode::kld;
  r.lr = 1e-3f;
  r.seed = 7;
  r.dev_f1 = 0.5;
  r.test_f1 = 0.25;
  r.best_epoch = 3;
  r.steps_to_best = 12;
  r.train_size = 40;
  EXPECT_EQ(kdb::result_csv_row(r), "bilstm,kd_ulb,kld,0.001,7,0.500000,0.250000,3,12,40\n");
  const std::string header = kdb::result_csv_header();
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 9);
}

}  // namespace
