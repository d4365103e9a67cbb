#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "kdbench/augment/augment.hpp"
#include "kdbench/data/synth.hpp"

namespace {

using kdb::BalanceStrategy;
using kdb::LengthFilter;

// Set whose hard labels follow `counts` (label -> count).
kdb::PseudoLabeledSet labeled_set(const std::map<std::size_t, std::size_t>& counts, std::size_t classes = 3) {
  kdb::PseudoLabeledSet s;
  for (const auto& [label, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      s.texts.push_back("t" + std::to_string(label) + "_" + std::to_string(i));
      s.samples.push_back({{4}, {1.0f}, {}});
      std::vector<std::size_t> l{label};
      kdb::SoftTarget t = kdb::SoftTarget::from_labels(l, classes);
      s.targets.push_back(t);
    }
  }
  return s;
}

std::map<std::size_t, std::size_t> counts_of(const kdb::PseudoLabeledSet& s) { return kdb::pool_stats(s).counts; }

double naive_population_std(const std::vector<double>& xs) {
  long double mean = 0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  long double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return static_cast<double>(std::sqrt(ss / xs.size()));
}

std::string text_of_length(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

TEST(MergePools, UnionAndDedup) {
  std::vector<kdb::PoolSource> disjoint{{"a", {"x y", "z", "w"}}, {"b", {"p", "q"}}};
  EXPECT_EQ(kdb::merge_pools(disjoint).size(), 5u);
  std::vector<kdb::PoolSource> shared{{"a", {"x  y", "z"}}, {"b", {" x y ", "q", ""}}};
  auto pool = kdb::merge_pools(shared);
  EXPECT_EQ(pool.texts, (std::vector<std::string>{"x y", "z", "q"}));
  EXPECT_EQ(pool.sources, (std::vector<std::string>{"a", "a", "b"}));
  EXPECT_THROW(kdb::merge_pools(std::span<const kdb::PoolSource>()), kdb::ContractError);
}

TEST(MergePools, FromDatasetsAndExclusion) {
  kdb::SynthClassificationConfig c;
  c.n_train = 30, c.n_dev = 5, c.n_test = 5;
  kdb::Dataset a = kdb::synth_classification(c);
  c.seed = 1;
  kdb::Dataset b = kdb::synth_classification(c);
  b.name = "other";
  std::vector<kdb::PoolSource> sources{kdb::train_texts(a), kdb::train_texts(b)};
  auto pool = kdb::merge_pools(sources);
  EXPECT_LE(pool.size(), 60u);
  EXPECT_GE(pool.size(), 30u);
  auto rest = kdb::exclude_texts(pool, sources[0].texts);
  for (const auto& s : rest.sources) EXPECT_EQ(s, "other");
}

TEST(PoolIo, RoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "kdbench_pool.txt";
  auto pool = kdb::make_pool(std::vector<std::string>{"a b", "c", "d e f"});
  kdb::write_pool(path, pool);
  EXPECT_EQ(kdb::read_pool(path).texts, pool.texts);
}

TEST(PseudoLabel, HardLabelAndDeterminism) {
  auto t = kdb::SoftTarget::from_probs(kdb::Tensor::vector({0.7f, 0.2f, 0.1f}));
  EXPECT_EQ(t.hard[0], 0u);

  kdb::SynthClassificationConfig c;
  c.n_train = 40, c.n_dev = 5, c.n_test = 5;
  kdb::Dataset d = kdb::synth_classification(c);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& e : d.train) corpus.push_back(e.tokens);
  kdb::Vocab v = kdb::Vocab::build(corpus);
  kdb::CnnSpec s;
  s.vocab_size = v.size(), s.max_len = 20, s.num_classes = 3, s.embed_dim = 8;
  kdb::Model teacher = kdb::build_model(s, 1);
  auto pool = kdb::make_pool(kdb::synth_classification_pool(c, 25, 3, 10, 4));
  auto a = kdb::pseudo_label(teacher, pool, v);
  auto b = kdb::pseudo_label(teacher, pool, v);
  ASSERT_EQ(a.size(), pool.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.targets[i].logits, b.targets[i].logits);

  // Labeling the training texts reproduces the teacher's own predictions.
  auto train_samples = kdb::encode_split(d.train, v, d.task, 20);
  auto preds = kdb::predict_labels(teacher, train_samples);
  std::vector<std::string> texts;
  for (const auto& e : d.train) texts.push_back(e.text);
  auto self = kdb::pseudo_label(teacher, kdb::make_pool(texts), v);
  for (std::size_t i = 0; i < self.size(); ++i) EXPECT_EQ(self.targets[i].hard[0], preds[i][0]);

  const std::string csv = kdb::format_pseudo_labels(a);
  EXPECT_EQ(csv.rfind("text_id,hard_label,logits\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), a.size() + 1);
}

TEST(PoolStats, CountsAndStd) {
  auto equal = kdb::pool_stats(labeled_set({{0, 100}, {1, 100}}));
  EXPECT_EQ(equal.std, 0.0);
  EXPECT_EQ(equal.total, 200u);
  auto skewed = kdb::pool_stats(labeled_set({{0, 2000}, {1, 100}, {2, 5}}));
  EXPECT_NEAR(skewed.std, naive_population_std({2000, 100, 5}), 1e-9);
  EXPECT_NEAR(skewed.std, 918.88, 0.01);
  EXPECT_EQ(skewed.total, 2105u);
  EXPECT_THROW(kdb::pool_stats(kdb::PseudoLabeledSet{}), kdb::ContractError);
}

TEST(Balance, MedianCap) {
  auto set = labeled_set({{0, 2000}, {1, 100}, {2, 5}});
  auto out = kdb::balance_pool(set, BalanceStrategy::median_cap(), 3);
  EXPECT_EQ(counts_of(out), (std::map<std::size_t, std::size_t>{{0, 100}, {1, 100}, {2, 5}}));
  // Subsampled items are distinct originals.
  std::set<std::string> uniq(out.texts.begin(), out.texts.end());
  EXPECT_EQ(uniq.size(), out.size());
}

TEST(Balance, TargetOversample) {
  auto set = labeled_set({{0, 10}, {1, 700}, {2, 518}});
  auto out = kdb::balance_pool(set, BalanceStrategy::target_oversample(518), 5);
  EXPECT_EQ(counts_of(out), (std::map<std::size_t, std::size_t>{{0, 518}, {1, 518}, {2, 518}}));
  EXPECT_EQ(kdb::pool_stats(out).std, 0.0);
  EXPECT_THROW(kdb::balance_pool(set, BalanceStrategy::target_oversample(0), 5), kdb::ParameterError);
  EXPECT_THROW(kdb::parse_balance("undersample"), kdb::ParameterError);
}

TEST(Balance, Properties) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<std::size_t, std::size_t> counts;
    const std::size_t k = 1 + trial % 5;
    std::uniform_int_distribution<std::size_t> d(1, 80);
    for (std::size_t l = 0; l < k; ++l) counts[l] = d(rng);
    auto set = labeled_set(counts, 5);
    auto capped = counts_of(kdb::balance_pool(set, BalanceStrategy::median_cap(), trial));
    ASSERT_EQ(capped.size(), counts.size());
    for (const auto& [label, n] : counts) EXPECT_LE(capped[label], n);
    const std::size_t n = d(rng);
    auto over = kdb::balance_pool(set, BalanceStrategy::target_oversample(n), trial);
    for (const auto& [label, c] : counts_of(over)) EXPECT_EQ(c, n);
    EXPECT_EQ(kdb::pool_stats(over).std, 0.0);
    auto again = kdb::balance_pool(set, BalanceStrategy::target_oversample(n), trial);
    EXPECT_EQ(over.texts, again.texts);
  }
}

TEST(Balance, RejectsTokenLevelTargets) {
  kdb::PseudoLabeledSet s;
  s.texts = {"a b"};
  s.samples = {{{4, 5}, {1, 1}, {}}};
  std::vector<std::size_t> tags{0, 1};
  s.targets = {kdb::SoftTarget::from_labels(tags, 2)};
  EXPECT_THROW(kdb::pool_stats(s), kdb::ContractError);
}

TEST(LengthStats, NearestRankQuantiles) {
  std::vector<std::string> texts;
  for (std::size_t n : {1, 4, 6, 8, 21}) texts.push_back(text_of_length(n));
  auto s = kdb::length_stats(texts);
  EXPECT_EQ(s.min, 1u);
  EXPECT_EQ(s.max, 21u);
  EXPECT_EQ(s.q1, 4u);  // ceil(1.25) = 2nd smallest
  EXPECT_EQ(s.q3, 8u);  // ceil(3.75) = 4th smallest
  EXPECT_DOUBLE_EQ(s.mean, 8.0);
  auto flat = kdb::length_stats(std::vector<std::string>{"a b", "c d", "e f"});
  EXPECT_EQ(flat.std, 0.0);
  EXPECT_THROW(kdb::length_stats(std::vector<std::string>{}), kdb::ContractError);
}

TEST(LengthFilter, Bounds) {
  kdb::LengthStats ref;
  ref.min = 1, ref.max = 21, ref.q1 = 4, ref.q3 = 8;
  auto pool = kdb::make_pool(std::vector<std::string>{text_of_length(3), text_of_length(25), text_of_length(14)});
  auto kept = kdb::filter_by_length(pool, LengthFilter::min_max, ref);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kdb::tokenize(kept.texts[0]).size(), 3u);
  EXPECT_EQ(kdb::tokenize(kept.texts[1]).size(), 14u);

  std::vector<std::string> all;
  for (std::size_t n = 1; n <= 12; ++n) all.push_back(text_of_length(n));
  auto q = kdb::filter_by_length(kdb::make_pool(all), LengthFilter::q1_q3, ref);
  std::vector<std::size_t> lengths;
  for (const auto& t : q.texts) lengths.push_back(kdb::tokenize(t).size());
  EXPECT_EQ(lengths, (std::vector<std::size_t>{4, 5, 6, 7, 8}));
  auto twice = kdb::filter_by_length(q, LengthFilter::q1_q3, ref);
  EXPECT_EQ(twice.texts, q.texts);
}

TEST(LengthFilter, NeverExceedsReference) {
  kdb::SynthClassificationConfig c;
  auto pool = kdb::make_pool(kdb::synth_classification_pool(c, 200, 1, 40, 3));
  auto ref = kdb::length_stats(kdb::synth_classification_pool(c, 50, 5, 15, 4));
  for (auto mode : {LengthFilter::min_max, LengthFilter::q1_q3}) {
    auto kept = kdb::filter_by_length(pool, mode, ref);
    const std::size_t hi = mode == LengthFilter::min_max ? ref.max : ref.q3;
    const std::size_t lo = mode == LengthFilter::min_max ? ref.min : ref.q1;
    for (const auto& t : kept.texts) {
      EXPECT_LE(kdb::tokenize(t).size(), hi);
      EXPECT_GE(kdb::tokenize(t).size(), lo);
    }
  }
}

}  // namespace
