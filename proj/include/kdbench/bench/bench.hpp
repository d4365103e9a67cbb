#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kdbench/bench/frozen.hpp"
#include "kdbench/data/dataset.hpp"

namespace kdb {

inline const std::vector<std::size_t>& default_bench_lengths() {
  static const std::vector<std::size_t> lengths = {4, 8, 16, 32, 64, 128};
  return lengths;
}

struct LatencyStats {
  std::size_t length = 0;
  std::vector<double> samples_ms;
  double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;
};

struct LatencyReport {
  std::vector<LatencyStats> per_length;
  std::size_t iterations = 0;
  std::size_t warmup = 0;
  std::string thread_note = "single thread";
};

struct BenchOptions {
  std::vector<std::size_t> lengths = default_bench_lengths();
  std::size_t iterations = 100;
  std::size_t warmup = 10;
  std::uint64_t seed = 0;
};

inline LatencyStats summarize_latency(std::size_t length, std::vector<double> samples) {
  if (samples.empty()) throw ContractError("latency stats need at least one sample");
  LatencyStats s;
  s.length = length;
  s.samples_ms = std::move(samples);
  double sum = 0.0;
  s.min = s.max = s.samples_ms[0];
  for (double v : s.samples_ms) {
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(s.samples_ms.size());
  double ss = 0.0;
  for (double v : s.samples_ms) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.samples_ms.size()));
  return s;
}

// Random non-special token ids; the same seed gives the same inputs.
inline std::vector<std::size_t> random_ids(std::size_t vocab, std::size_t length, std::mt19937_64& rng) {
  const std::size_t lo = vocab > 4 ? 4 : 0;
  std::uniform_int_distribution<std::size_t> d(lo, vocab - 1);
  std::vector<std::size_t> ids(length);
  for (auto& id : ids) id = d(rng);
  return ids;
}

// Times `run(ids)` per single sentence. Only the call is inside the timed region.
template <class Run>
LatencyReport bench_with(Run&& run, const ModelSpec& spec, const BenchOptions& opt) {
  if (opt.iterations == 0) throw ParameterError("bench iterations must be at least 1");
  if (opt.lengths.empty()) throw ParameterError("bench needs at least one length");
  for (auto L : opt.lengths) {
    if (L == 0 || L > max_len_of(spec)) {
      throw ParameterError("bench length " + std::to_string(L) + " outside [1, max_len=" +
                           std::to_string(max_len_of(spec)) + "]");
    }
  }
  LatencyReport rep;
  rep.iterations = opt.iterations;
  rep.warmup = opt.warmup;
  std::mt19937_64 rng(opt.seed);
  for (auto L : opt.lengths) {
    const auto ids = random_ids(vocab_size_of(spec), L, rng);
    for (std::size_t i = 0; i < opt.warmup; ++i) run(ids);
    std::vector<double> samples;
    samples.reserve(opt.iterations);
    for (std::size_t i = 0; i < opt.iterations; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      run(ids);
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    rep.per_length.push_back(summarize_latency(L, std::move(samples)));
  }
  return rep;
}

// Frozen path: inference graph, reused scratch.
inline LatencyReport bench_latency(FrozenSession& session, const BenchOptions& opt = {}) {
  return bench_with([&](const std::vector<std::size_t>& ids) { session.infer(ids); }, session.model().spec, opt);
}

// Live path: a fresh recording graph per sentence, as during training.
inline LatencyReport bench_live(Model& model, const BenchOptions& opt = {}) {
  return bench_with(
      [&](const std::vector<std::size_t>& ids) {
        Graph g(Graph::Mode::record);
        forward(model, g, ids);
      },
      model.spec, opt);
}

struct CostReport {
  std::string model;
  std::size_t params = 0;
  std::size_t file_bytes_f32 = 0;
  std::size_t file_bytes_int8 = 0;
  std::optional<LatencyReport> live;
  LatencyReport frozen;
};

namespace detail {
inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
inline std::string mb(std::size_t bytes) { return fixed(static_cast<double>(bytes) / 1e6, 3); }
inline std::string millions(std::size_t n) { return fixed(static_cast<double>(n) / 1e6, 2); }
}  // namespace detail

// One row per (model, path). Latency columns are the mean milliseconds per length.
inline std::string cost_table_csv(std::span<const CostReport> reports) {
  if (reports.empty()) throw ParameterError("cost table needs at least one report");
  const auto& lengths = reports[0].frozen.per_length;
  std::string out = "model,path,params_m,file_mb_f32,file_mb_int8";
  for (const auto& l : lengths) out += ",ms_len_" + std::to_string(l.length);
  out += '\n';
  auto row = [&](const CostReport& r, const char* path, const LatencyReport& lat) {
    if (lat.per_length.size() != lengths.size()) throw ContractError("cost reports use different lengths");
    out += detail::csv_quote(r.model) + ',' + path + ',' + detail::millions(r.params) + ',' + detail::mb(r.file_bytes_f32) +
           ',' + detail::mb(r.file_bytes_int8);
    for (const auto& l : lat.per_length) out += ',' + detail::fixed(l.mean, 4);
    out += '\n';
  };
  for (const auto& r : reports) {
    if (r.live) row(r, "live", *r.live);
    row(r, "frozen", r.frozen);
  }
  return out;
}

// Original-vs-frozen pairing per length, one row per model.
inline std::string cost_table_markdown(std::span<const CostReport> reports) {
  if (reports.empty()) throw ParameterError("cost table needs at least one report");
  const auto& lengths = reports[0].frozen.per_length;
  std::string head = "| Model | Params (M) | File MB (f32) | File MB (int8) |";
  std::string rule = "|---|---:|---:|---:|";
  for (const auto& l : lengths) {
    head += " CPU ms L=" + std::to_string(l.length) + " original | CPU ms L=" + std::to_string(l.length) + " frozen |";
    rule += "---:|---:|";
  }
  std::string out = head + '\n' + rule + '\n';
  for (const auto& r : reports) {
    out += "| " + r.model + " | " + detail::millions(r.params) + " | " + detail::mb(r.file_bytes_f32) + " | " +
           detail::mb(r.file_bytes_int8) + " |";
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      out += ' ' + (r.live ? detail::fixed(r.live->per_length.at(i).mean, 3) : std::string("-")) + " | " +
             detail::fixed(r.frozen.per_length.at(i).mean, 3) + " |";
    }
    out += '\n';
  }
  return out;
}

struct CostRow {
  std::string model, path;
  double params_m = 0, file_mb_f32 = 0, file_mb_int8 = 0;
  std::vector<std::pair<std::size_t, double>> ms;
};

inline std::vector<CostRow> parse_cost_csv(std::string_view text) {
  const auto rows = detail::parse_csv(text);
  if (rows.empty()) throw FormatError("cost table: empty");
  const auto& h = rows[0].fields;
  if (h.size() < 5 || h[0] != "model" || h[1] != "path") throw FormatError("cost table: bad header");
  std::vector<std::size_t> lengths;
  for (std::size_t i = 5; i < h.size(); ++i) {
    if (h[i].rfind("ms_len_", 0) != 0) throw FormatError("cost table: bad column " + h[i]);
    lengths.push_back(std::stoul(h[i].substr(7)));
  }
  std::vector<CostRow> out;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& f = rows[k].fields;
    if (f.size() != h.size()) throw FormatError("cost table: row " + std::to_string(k + 1) + " has wrong width");
    CostRow r{f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), {}};
    for (std::size_t i = 0; i < lengths.size(); ++i) r.ms.emplace_back(lengths[i], std::stod(f[5 + i]));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace kdb
