#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kdbench/core/error.hpp"

namespace kdb {

// Whitespace tokenizer.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::string join(std::span<const std::string> words, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

// Collapses whitespace runs to single spaces and trims the ends.
inline std::string normalize_whitespace(std::string_view text) { return join(tokenize(text)); }

// Word vocabulary with four reserved ids.
class Vocab {
 public:
  static constexpr std::size_t pad = 0;
  static constexpr std::size_t unk = 1;
  static constexpr std::size_t cls = 2;
  static constexpr std::size_t sep = 3;
  static constexpr std::size_t num_special = 4;

  Vocab() : words_{"[PAD]", "[UNK]", "[CLS]", "[SEP]"} {
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  }

  // Frequency-ordered vocabulary (ties broken lexicographically), capped at
  // max_size entries including the reserved ones (0 = uncapped).
  static Vocab build(std::span<const std::vector<std::string>> corpus, std::size_t max_size = 0,
                     std::size_t min_freq = 1) {
    std::map<std::string, std::size_t> freq;
    for (const auto& sentence : corpus) {
      for (const auto& w : sentence) ++freq[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [w, n] : ranked) {
      if (n < min_freq) break;
      if (max_size && v.size() >= max_size) break;
      v.add(w);
    }
    return v;
  }

  static Vocab from_words(std::span<const std::string> words) {
    Vocab v;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i < num_special) {
        if (words[i] != v.words_[i]) throw FormatError("vocabulary must start with the reserved tokens", i + 1);
        continue;
      }
      if (v.contains(words[i])) throw FormatError("duplicate vocabulary entry '" + words[i] + "'", i + 1);
      v.add(words[i]);
    }
    return v;
  }

  std::size_t add(const std::string& word) {
    auto [it, inserted] = index_.emplace(word, words_.size());
    if (inserted) words_.push_back(word);
    return it->second;
  }

  std::size_t id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? unk : it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  bool operator==(const Vocab& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Model input for one sequence. Classification inputs start with [CLS];
// sequence-labeling inputs map tokens one to one.
struct Encoded {
  std::vector<std::size_t> ids;
  std::vector<float> mask;
};

inline Encoded encode(std::span<const std::string> tokens, const Vocab& vocab, std::size_t max_len,
                      bool with_cls) {
  Encoded e;
  if (with_cls) e.ids.push_back(Vocab::cls);
  for (const auto& t : tokens) {
    if (e.ids.size() >= max_len) break;
    e.ids.push_back(vocab.id(t));
  }
  if (e.ids.empty()) e.ids.push_back(Vocab::unk);
  e.mask.assign(e.ids.size(), 1.0f);
  return e;
}

}  // namespace kdb
