#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdbench/data/io.hpp"
#include "kdbench/data/text.hpp"
#include "kdbench/distill/train.hpp"
#include "kdbench/models/model.hpp"

namespace kdb {

// Word -> vector table with a fixed dimension.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  void add(const std::string& word, std::span<const float> vec) {
    if (vec.size() != dim_) {
      throw DimensionError("vector for '" + word + "' has length " + std::to_string(vec.size()) + ", expected " +
                           std::to_string(dim_));
    }
    if (!index_.emplace(word, words_.size()).second) throw ContractError("duplicate word '" + word + "'");
    words_.push_back(word);
    data_.insert(data_.end(), vec.begin(), vec.end());
  }

  const float* find(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? nullptr : data_.data() + it->second * dim_;
  }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  bool operator==(const EmbeddingTable& o) const { return dim_ == o.dim_ && words_ == o.words_ && data_ == o.data_; }

 private:
  std::size_t dim_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
};

// Text vectors: an optional "count dim" header, then one "word v1 ... vd" per line.
inline EmbeddingTable parse_word_vectors(std::string_view contents) {
  const auto lines = split_lines(contents);
  EmbeddingTable table;
  bool have_dim = false;
  std::size_t expected_count = 0;
  std::size_t first = 0;
  std::vector<float> vec;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto fields = tokenize(lines[n]);
    if (fields.empty()) continue;
    if (n == first && fields.size() == 2 && !have_dim) {
      std::size_t count = 0, dim = 0;
      const auto& a = fields[0];
      const auto& b = fields[1];
      const bool ok = std::from_chars(a.data(), a.data() + a.size(), count).ec == std::errc() &&
                      std::from_chars(b.data(), b.data() + b.size(), dim).ec == std::errc();
      if (ok && dim > 0) {
        table = EmbeddingTable(dim);
        have_dim = true;
        expected_count = count;
        continue;
      }
    }
    if (fields.size() < 2) throw FormatError("expected a word followed by its vector", n + 1);
    vec.clear();
    for (std::size_t k = 1; k < fields.size(); ++k) {
      float v = 0.0f;
      const auto& f = fields[k];
      const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size()) throw FormatError("bad number '" + f + "'", n + 1);
      vec.push_back(v);
    }
    if (!have_dim) {
      table = EmbeddingTable(vec.size());
      have_dim = true;
    }
    if (vec.size() != table.dim()) {
      throw FormatError("vector has " + std::to_string(vec.size()) + " values, expected " + std::to_string(table.dim()),
                        n + 1);
    }
    if (table.find(fields[0])) throw FormatError("duplicate word '" + fields[0] + "'", n + 1);
    table.add(fields[0], vec);
  }
  if (expected_count && table.size() != expected_count) {
    throw FormatError("header declares " + std::to_string(expected_count) + " words, found " +
                      std::to_string(table.size()));
  }
  return table;
}

inline EmbeddingTable load_word_vectors(const std::filesystem::path& path) {
  try {
    return parse_word_vectors(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline std::string format_word_vectors(const EmbeddingTable& table) {
  std::string out = std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n";
  char buf[32];
  for (std::size_t i = 0; i < table.size(); ++i) {
    out += table.words()[i];
    for (float v : table.row(i)) {
      const auto r = std::to_chars(buf, buf + sizeof buf, v);
      out += ' ';
      out.append(buf, r.ptr);
    }
    out += '\n';
  }
  return out;
}

inline void save_word_vectors(const std::filesystem::path& path, const EmbeddingTable& table) {
  write_file(path, format_word_vectors(table));
}

inline const char* token_embedding_name(ModelFamily f) {
  return f == ModelFamily::transformer ? "embeddings.token" : "embedding";
}

// The teacher's token-embedding rows, one per vocabulary entry.
inline EmbeddingTable extract_teacher_embeddings(const Model& teacher, const Vocab& vocab) {
  const Tensor& emb = teacher.params.at(token_embedding_name(teacher.family())).value;
  if (emb.rows() < vocab.size()) throw ConfigError("vocabulary is larger than the teacher's embedding table");
  EmbeddingTable table(emb.cols());
  for (std::size_t i = 0; i < vocab.size(); ++i) table.add(vocab.word(i), emb.row(i));
  return table;
}

struct EmbeddingInitReport {
  std::size_t copied = 0;
  std::size_t oov = 0;
  double oov_fraction = 0.0;
};

// Copies table rows into the student's embedding for every vocabulary word
// the table knows; other rows are drawn from N(0, oov_std); the [PAD] row is zeroed.
inline EmbeddingInitReport initialize_student_embedding(Model& student, const EmbeddingTable& table,
                                                        const Vocab& vocab, std::uint64_t seed,
                                                        float oov_std = 0.02f) {
  Tensor& emb = student.params.at(token_embedding_name(student.family())).value;
  if (table.dim() != emb.cols()) {
    throw ConfigError("embedding table dim " + std::to_string(table.dim()) + " does not match student embed_dim " +
                      std::to_string(emb.cols()));
  }
  if (vocab.size() > emb.rows()) throw ConfigError("vocabulary is larger than the student's embedding table");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, oov_std);
  EmbeddingInitReport report;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto row = emb.row(i);
    if (const float* v = table.find(vocab.word(i))) {
      std::copy(v, v + table.dim(), row.begin());
      ++report.copied;
    } else {
      for (auto& x : row) x = normal(rng);
      ++report.oov;
    }
  }
  std::fill(emb.row(Vocab::pad).begin(), emb.row(Vocab::pad).end(), 0.0f);
  report.oov_fraction = vocab.size() ? static_cast<double>(report.oov) / static_cast<double>(vocab.size()) : 0.0;
  return report;
}

// Optimizer steps taken when the best validation loss was reached.
inline std::size_t convergence_steps(const TrainHistory& h) {
  if (h.epochs() == 0) throw ContractError("convergence_steps: empty history");
  return h.steps_to_best;
}

}  // namespace kdb
