#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "kdbench/data/dataset.hpp"

namespace kdb {

namespace detail {

inline std::string padded(std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

inline std::size_t digits(std::size_t n) { return std::to_string(n > 0 ? n - 1 : 0).size(); }

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline void require_sizes(std::size_t a, std::size_t b, std::size_t c) {
  if (a == 0 || b == 0 || c == 0) throw ParameterError("split sizes must be positive");
}

}  // namespace detail

// Topic-style classification: every class owns a few marker words and a text
// belongs to the class whose markers it contains most often, hidden among
// filler words. `noise` flips that fraction of train/dev labels to another
// class; the test split stays clean unless `noisy_test` is set.
struct SynthClassificationConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 600;
  std::size_t n_dev = 150;
  std::size_t n_test = 300;
  std::size_t n_classes = 3;
  std::size_t vocab_size = 200;  // filler words
  std::size_t markers_per_class = 4;
  std::size_t min_len = 5;
  std::size_t max_len = 15;
  std::size_t max_markers = 3;
  float noise = 0.0f;
  bool noisy_test = false;

  void validate() const {
    detail::require_sizes(n_train, n_dev, n_test);
    if (n_classes < 2) throw ParameterError("n_classes must be at least 2");
    if (vocab_size == 0 || markers_per_class == 0 || max_markers == 0) {
      throw ParameterError("vocab_size, markers_per_class and max_markers must be positive");
    }
    if (min_len == 0 || min_len > max_len) throw ParameterError("length range must satisfy 1 <= min <= max");
    if (!(noise >= 0.0f && noise < 1.0f)) throw ParameterError("noise must be in [0, 1)");
  }
};

inline std::string class_name(std::size_t c, std::size_t n_classes) {
  return "c" + detail::padded(c, detail::digits(n_classes));
}
inline std::string marker_word(std::size_t c, std::size_t j) {
  return "m" + std::to_string(c) + "_" + std::to_string(j);
}
inline std::string filler_word(std::size_t j) { return "w" + std::to_string(j); }

namespace detail {

// Text for class c: k true markers, fewer than k markers of one other class,
// the rest filler.
inline std::vector<std::string> synth_text(const SynthClassificationConfig& cfg, std::size_t c,
                                           std::size_t min_len, std::size_t max_len, std::mt19937_64& rng) {
  const std::size_t len = uniform_index(rng, min_len, max_len);
  const std::size_t k = uniform_index(rng, 1, std::min(cfg.max_markers, len));
  const std::size_t room = std::min(k - 1, len - k);
  const std::size_t distract = room ? uniform_index(rng, 0, room) : 0;
  std::size_t other = uniform_index(rng, 0, cfg.n_classes - 2);
  if (other >= c) ++other;
  std::vector<std::string> tokens;
  tokens.reserve(len);
  for (std::size_t i = 0; i < k; ++i) tokens.push_back(marker_word(c, uniform_index(rng, 0, cfg.markers_per_class - 1)));
  for (std::size_t i = 0; i < distract; ++i) {
    tokens.push_back(marker_word(other, uniform_index(rng, 0, cfg.markers_per_class - 1)));
  }
  while (tokens.size() < len) tokens.push_back(filler_word(uniform_index(rng, 0, cfg.vocab_size - 1)));
  std::shuffle(tokens.begin(), tokens.end(), rng);
  return tokens;
}

}  // namespace detail

inline Dataset synth_classification(const SynthClassificationConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Dataset d;
  d.name = "synth_cls";
  d.task = Task::classification;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) d.labels.push_back(class_name(c, cfg.n_classes));
  std::unordered_set<std::string> seen;
  auto make_split = [&](std::size_t n, bool noisy) {
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % cfg.n_classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    Split out;
    std::bernoulli_distribution flip(noisy ? cfg.noise : 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::string> tokens;
      std::string text;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        tokens = detail::synth_text(cfg, labels[i], cfg.min_len, cfg.max_len, rng);
        text = join(tokens);
        if (seen.insert(text).second) break;
      }
      std::size_t label = labels[i];
      if (flip(rng)) {
        std::size_t other = detail::uniform_index(rng, 0, cfg.n_classes - 2);
        label = other >= label ? other + 1 : other;
      }
      out.push_back(make_text_example(std::move(text), label));
    }
    return out;
  };
  d.train = make_split(cfg.n_train, true);
  d.dev = make_split(cfg.n_dev, true);
  d.test = make_split(cfg.n_test, cfg.noisy_test);
  return d;
}

// Unlabeled texts from the same generator with their own length range.
inline std::vector<std::string> synth_classification_pool(const SynthClassificationConfig& cfg, std::size_t n,
                                                          std::size_t min_len, std::size_t max_len,
                                                          std::uint64_t seed) {
  SynthClassificationConfig c = cfg;
  c.min_len = min_len;
  c.max_len = max_len;
  c.validate();
  std::mt19937_64 rng(seed);
  std::vector<std::string> texts;
  texts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    texts.push_back(join(detail::synth_text(c, detail::uniform_index(rng, 0, c.n_classes - 1), min_len, max_len, rng)));
  }
  return texts;
}

// Entity tagging: spans drawn from type-specific lexicons are planted in
// filler text with at least one filler token between spans. With `noise`,
// each filler position is replaced by a lexicon word tagged O with that
// probability, which makes lexicon membership ambiguous. With `tag_noise`,
// each gold span in train and dev has its type replaced by another type with
// that probability; test tags stay clean.
struct SynthSeqLabConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 600;
  std::size_t n_dev = 150;
  std::size_t n_test = 300;
  std::size_t n_entity_types = 3;
  std::size_t lexicon_size = 8;
  std::size_t vocab_size = 200;
  std::size_t min_len = 6;
  std::size_t max_len = 14;
  std::size_t max_entities = 3;
  std::size_t max_span = 2;
  float noise = 0.0f;
  float tag_noise = 0.0f;

  void validate() const {
    detail::require_sizes(n_train, n_dev, n_test);
    if (n_entity_types == 0 || lexicon_size == 0 || vocab_size == 0 || max_span == 0) {
      throw ParameterError("entity types, lexicon, vocabulary and span sizes must be positive");
    }
    if (min_len == 0 || min_len > max_len) throw ParameterError("length range must satisfy 1 <= min <= max");
    if (!(noise >= 0.0f && noise < 1.0f)) throw ParameterError("noise must be in [0, 1)");
    if (!(tag_noise >= 0.0f && tag_noise < 1.0f)) throw ParameterError("tag_noise must be in [0, 1)");
    if (tag_noise > 0.0f && n_entity_types < 2) throw ParameterError("tag_noise needs at least two entity types");
  }
};

inline std::string entity_type_name(std::size_t t) {
  static const char* names[] = {"PER", "ORG", "LOC", "MISC", "DATE", "EVT", "PRD", "NUM"};
  return t < 8 ? names[t] : "T" + std::to_string(t);
}
inline std::string lexicon_word(std::size_t type, std::size_t j) {
  return "e" + std::to_string(type) + "_" + std::to_string(j);
}

inline std::vector<std::string> seqlab_label_names(std::size_t n_types) {
  std::vector<std::string> names{"O"};
  for (std::size_t t = 0; t < n_types; ++t) {
    names.push_back("B-" + entity_type_name(t));
    names.push_back("I-" + entity_type_name(t));
  }
  std::sort(names.begin(), names.end());
  return names;
}

namespace detail {

struct TaggedTokens {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

inline TaggedTokens synth_tagged(const SynthSeqLabConfig& cfg, std::size_t min_len, std::size_t max_len,
                                 std::mt19937_64& rng) {
  const std::size_t len = uniform_index(rng, min_len, max_len);
  std::vector<std::size_t> spans;
  std::size_t used = 0;
  const std::size_t want = uniform_index(rng, 0, cfg.max_entities);
  for (std::size_t e = 0; e < want; ++e) {
    const std::size_t s = uniform_index(rng, 1, cfg.max_span);
    const std::size_t need = used + s + spans.size();  // one separator per earlier span
    if (need > len) break;
    spans.push_back(s);
    used += s;
  }
  std::vector<std::size_t> gaps(spans.size() + 1, 0);
  for (std::size_t i = 1; i + 1 < gaps.size(); ++i) gaps[i] = 1;
  std::size_t free = len - used - (spans.empty() ? 0 : spans.size() - 1);
  while (free--) ++gaps[uniform_index(rng, 0, gaps.size() - 1)];

  std::bernoulli_distribution confuse(cfg.noise);
  TaggedTokens out;
  auto filler = [&](std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (confuse(rng)) {
        out.tokens.push_back(lexicon_word(uniform_index(rng, 0, cfg.n_entity_types - 1),
                                          uniform_index(rng, 0, cfg.lexicon_size - 1)));
      } else {
        out.tokens.push_back(filler_word(uniform_index(rng, 0, cfg.vocab_size - 1)));
      }
      out.tags.push_back("O");
    }
  };
  for (std::size_t s = 0; s < spans.size(); ++s) {
    filler(gaps[s]);
    const std::size_t type = uniform_index(rng, 0, cfg.n_entity_types - 1);
    for (std::size_t i = 0; i < spans[s]; ++i) {
      out.tokens.push_back(lexicon_word(type, uniform_index(rng, 0, cfg.lexicon_size - 1)));
      out.tags.push_back((i == 0 ? "B-" : "I-") + entity_type_name(type));
    }
  }
  filler(gaps.back());
  return out;
}

}  // namespace detail

inline Dataset synth_sequence_labeling(const SynthSeqLabConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Dataset d;
  d.name = "synth_seqlab";
  d.task = Task::sequence_labeling;
  d.labels = seqlab_label_names(cfg.n_entity_types);
  std::unordered_set<std::string> seen;
  // Separate stream so the tokens do not depend on tag_noise.
  std::mt19937_64 noise_rng(cfg.seed ^ 0x5eedf00dULL);
  std::bernoulli_distribution retype(cfg.tag_noise);
  auto make_split = [&](std::size_t n, bool noisy) {
    Split out;
    for (std::size_t i = 0; i < n; ++i) {
      detail::TaggedTokens tt;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        tt = detail::synth_tagged(cfg, cfg.min_len, cfg.max_len, rng);
        if (seen.insert(join(tt.tokens)).second) break;
      }
      if (noisy && cfg.tag_noise > 0.0f) {
        std::string type;
        for (auto& t : tt.tags) {
          if (t[0] == 'B') {
            type = t.substr(2);
            if (retype(noise_rng)) {
              std::size_t cur = 0;
              while (entity_type_name(cur) != type) ++cur;
              std::size_t other = detail::uniform_index(noise_rng, 0, cfg.n_entity_types - 2);
              type = entity_type_name(other >= cur ? other + 1 : other);
            }
          }
          if (t != "O") t = t.substr(0, 2) + type;
        }
      }
      std::vector<std::size_t> ids;
      for (const auto& t : tt.tags) {
        ids.push_back(static_cast<std::size_t>(std::lower_bound(d.labels.begin(), d.labels.end(), t) -
                                               d.labels.begin()));
      }
      out.push_back(make_tagged_example(std::move(tt.tokens), std::move(ids)));
    }
    return out;
  };
  d.train = make_split(cfg.n_train, true);
  d.dev = make_split(cfg.n_dev, true);
  d.test = make_split(cfg.n_test, false);
  return d;
}

inline std::vector<std::string> synth_seqlab_pool(const SynthSeqLabConfig& cfg, std::size_t n, std::size_t min_len,
                                                  std::size_t max_len, std::uint64_t seed) {
  SynthSeqLabConfig c = cfg;
  c.min_len = min_len;
  c.max_len = max_len;
  c.validate();
  std::mt19937_64 rng(seed);
  std::vector<std::string> texts;
  texts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) texts.push_back(join(detail::synth_tagged(c, min_len, max_len, rng).tokens));
  return texts;
}

}  // namespace kdb
