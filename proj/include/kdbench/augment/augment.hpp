#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "kdbench/data/dataset.hpp"
#include "kdbench/distill/train.hpp"

namespace kdb {

// ---- Pools -----------------------------------------------------------------

struct PoolSource {
  std::string name;
  std::vector<std::string> texts;
};

// Unlabeled texts with the name of the source each came from.
struct UnlabeledPool {
  std::vector<std::string> texts;
  std::vector<std::string> sources;

  std::size_t size() const noexcept { return texts.size(); }
};

inline PoolSource train_texts(const Dataset& d) {
  PoolSource s{d.name, {}};
  s.texts.reserve(d.train.size());
  for (const auto& e : d.train) s.texts.push_back(e.text);
  return s;
}

// Union of all texts in source order; whitespace is normalised, empty texts
// are dropped and repeats keep their first source.
inline UnlabeledPool merge_pools(std::span<const PoolSource> sources) {
  if (sources.empty()) throw ContractError("merge_pools: no sources");
  UnlabeledPool pool;
  std::unordered_set<std::string> seen;
  for (const auto& src : sources) {
    for (const auto& raw : src.texts) {
      std::string t = normalize_whitespace(raw);
      if (t.empty() || !seen.insert(t).second) continue;
      pool.texts.push_back(std::move(t));
      pool.sources.push_back(src.name);
    }
  }
  return pool;
}

inline UnlabeledPool make_pool(std::span<const std::string> texts, const std::string& source = "pool") {
  const PoolSource src{source, {texts.begin(), texts.end()}};
  return merge_pools(std::span<const PoolSource>(&src, 1));
}

// Removes pool texts that also appear in `exclude` (e.g. labeled training text).
inline UnlabeledPool exclude_texts(const UnlabeledPool& pool, std::span<const std::string> exclude) {
  std::unordered_set<std::string> drop;
  for (const auto& t : exclude) drop.insert(normalize_whitespace(t));
  UnlabeledPool out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (drop.count(pool.texts[i])) continue;
    out.texts.push_back(pool.texts[i]);
    out.sources.push_back(pool.sources[i]);
  }
  return out;
}

inline UnlabeledPool read_pool(const std::filesystem::path& path, const std::string& source = "") {
  const auto lines = split_lines(read_file(path));
  return make_pool(lines, source.empty() ? path.stem().string() : source);
}

inline void write_pool(const std::filesystem::path& path, const UnlabeledPool& pool) {
  std::string out;
  for (const auto& t : pool.texts) out += t + '\n';
  write_file(path, out);
}

// ---- Pseudo-labels ---------------------------------------------------------

struct PseudoLabeledSet {
  std::vector<std::string> texts;
  std::vector<Sample> samples;
  std::vector<SoftTarget> targets;

  std::size_t size() const noexcept { return texts.size(); }
};

inline PseudoLabeledSet pseudo_label(Model& teacher, const UnlabeledPool& pool, const Vocab& vocab) {
  PseudoLabeledSet out;
  out.texts = pool.texts;
  out.samples = encode_texts(pool.texts, vocab, teacher.task(), teacher.max_len());
  out.targets = teacher_logits(teacher, out.samples);
  return out;
}

inline PseudoLabeledSet subset(const PseudoLabeledSet& set, std::span<const std::size_t> indices) {
  PseudoLabeledSet out;
  for (auto i : indices) {
    out.texts.push_back(set.texts.at(i));
    out.samples.push_back(set.samples.at(i));
    out.targets.push_back(set.targets.at(i));
  }
  return out;
}

// CSV rows: text_id, hard_label, logits... For token-level targets the hard
// labels are space separated and the logits flattened row-major.
inline std::string format_pseudo_labels(const PseudoLabeledSet& set) {
  std::ostringstream out;
  out.precision(9);
  out << "text_id,hard_label,logits\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& t = set.targets[i];
    out << i << ',';
    for (std::size_t r = 0; r < t.hard.size(); ++r) out << (r ? " " : "") << t.hard[r];
    out << ',';
    const auto v = t.logits.data();
    for (std::size_t k = 0; k < v.size(); ++k) out << (k ? " " : "") << v[k];
    out << '\n';
  }
  return out.str();
}

// ---- Label balance ---------------------------------------------------------

namespace detail {

inline std::size_t item_label(const SoftTarget& t) {
  if (t.hard.size() != 1) throw ContractError("label balancing needs one label per text (classification pools)");
  return t.hard[0];
}

}  // namespace detail

struct PoolStats {
  std::map<std::size_t, std::size_t> counts;  // hard label -> texts
  double std = 0.0;                           // population std of the counts
  std::size_t total = 0;
};

inline double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

inline PoolStats stats_from_counts(std::map<std::size_t, std::size_t> counts) {
  PoolStats s;
  std::vector<double> v;
  for (const auto& [label, n] : counts) {
    v.push_back(static_cast<double>(n));
    s.total += n;
  }
  s.std = population_std(v);
  s.counts = std::move(counts);
  return s;
}

inline PoolStats pool_stats(const PseudoLabeledSet& set) {
  if (set.size() == 0) throw ContractError("pool_stats: empty set");
  std::map<std::size_t, std::size_t> counts;
  for (const auto& t : set.targets) ++counts[detail::item_label(t)];
  return stats_from_counts(std::move(counts));
}

enum class BalanceKind { median_cap, target_oversample };

struct BalanceStrategy {
  BalanceKind kind = BalanceKind::median_cap;
  std::size_t target = 0;  // per-label count for target_oversample

  static BalanceStrategy median_cap() { return {BalanceKind::median_cap, 0}; }
  static BalanceStrategy target_oversample(std::size_t n) { return {BalanceKind::target_oversample, n}; }
};

inline BalanceStrategy parse_balance(const std::string& s, std::size_t target = 0) {
  if (s == "median_cap") return BalanceStrategy::median_cap();
  if (s == "target_oversample") {
    if (target == 0) throw ParameterError("target_oversample needs a positive target");
    return BalanceStrategy::target_oversample(target);
  }
  throw ParameterError("unknown balance strategy '" + s + "'");
}

// Lower median of the per-label counts (nearest rank at 50%).
inline std::size_t median_count(const PoolStats& s) {
  std::vector<std::size_t> v;
  for (const auto& [label, n] : s.counts) v.push_back(n);
  std::sort(v.begin(), v.end());
  return v.empty() ? 0 : v[(v.size() + 1) / 2 - 1];
}

// Per-label resampling. median_cap keeps a random subset of at most the
// median count per label; target_oversample draws exactly `target` per label,
// adding duplicates drawn with replacement when a label is short. Output is
// grouped by label in ascending order, original order within a group.
inline PseudoLabeledSet balance_pool(const PseudoLabeledSet& set, BalanceStrategy strategy, std::uint64_t seed) {
  if (strategy.kind == BalanceKind::target_oversample && strategy.target == 0) {
    throw ParameterError("target_oversample needs a positive target");
  }
  const PoolStats stats = pool_stats(set);
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < set.size(); ++i) groups[detail::item_label(set.targets[i])].push_back(i);
  const std::size_t cap = strategy.kind == BalanceKind::median_cap ? median_count(stats) : strategy.target;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  for (auto& [label, idx] : groups) {
    if (idx.size() >= cap) {
      std::vector<std::size_t> chosen;
      std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), cap, rng);
      picked.insert(picked.end(), chosen.begin(), chosen.end());
      continue;
    }
    picked.insert(picked.end(), idx.begin(), idx.end());
    if (strategy.kind == BalanceKind::target_oversample) {
      std::uniform_int_distribution<std::size_t> d(0, idx.size() - 1);
      for (std::size_t k = idx.size(); k < cap; ++k) picked.push_back(idx[d(rng)]);
    }
  }
  return subset(set, picked);
}

// ---- Length statistics -----------------------------------------------------

struct LengthStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t min = 0;
  std::size_t q1 = 0;
  std::size_t q3 = 0;
  std::size_t max = 0;
};

// Nearest-rank quantile of sorted values: the ceil(p * n)-th smallest.
inline std::size_t nearest_rank(std::span<const std::size_t> sorted, double p) {
  const auto n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

inline LengthStats length_stats_of(std::vector<std::size_t> lengths) {
  if (lengths.empty()) throw ContractError("length_stats: empty pool");
  std::sort(lengths.begin(), lengths.end());
  std::vector<double> v(lengths.begin(), lengths.end());
  LengthStats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  s.std = population_std(v);
  s.min = lengths.front();
  s.max = lengths.back();
  s.q1 = nearest_rank(lengths, 0.25);
  s.q3 = nearest_rank(lengths, 0.75);
  return s;
}

inline LengthStats length_stats(std::span<const std::string> texts) {
  std::vector<std::size_t> lengths;
  lengths.reserve(texts.size());
  for (const auto& t : texts) lengths.push_back(tokenize(t).size());
  return length_stats_of(std::move(lengths));
}

enum class LengthFilter { min_max, q1_q3 };

inline LengthFilter parse_length_filter(const std::string& s) {
  if (s == "min_max") return LengthFilter::min_max;
  if (s == "q1_q3") return LengthFilter::q1_q3;
  throw ParameterError("unknown length filter '" + s + "'");
}

// Keeps texts whose token count lies in [min, max] or [Q1, Q3] of `ref`, inclusive.
inline UnlabeledPool filter_by_length(const UnlabeledPool& pool, LengthFilter mode, const LengthStats& ref) {
  const std::size_t lo = mode == LengthFilter::min_max ? ref.min : ref.q1;
  const std::size_t hi = mode == LengthFilter::min_max ? ref.max : ref.q3;
  if (lo > hi) throw ContractError("filter_by_length: reference bounds are inverted");
  UnlabeledPool out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const std::size_t n = tokenize(pool.texts[i]).size();
    if (n < lo || n > hi) continue;
    out.texts.push_back(pool.texts[i]);
    out.sources.push_back(pool.sources[i]);
  }
  return out;
}

}  // namespace kdb
