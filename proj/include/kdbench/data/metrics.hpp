#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "kdbench/core/error.hpp"

namespace kdb {

namespace detail {

inline double f1_from_counts(double tp, double fp, double fn) {
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

}  // namespace detail

// Unweighted mean of per-class F1 over all n_classes. A class that never
// occurs in either sequence contributes 0.
inline double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> golds,
                       std::size_t n_classes) {
  if (preds.size() != golds.size()) throw ContractError("macro_f1: prediction and gold lengths differ");
  if (n_classes == 0) throw ContractError("macro_f1: n_classes must be positive");
  std::vector<double> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes || golds[i] >= n_classes) throw ContractError("macro_f1: label id out of range");
    if (preds[i] == golds[i]) {
      ++tp[golds[i]];
    } else {
      ++fp[preds[i]];
      ++fn[golds[i]];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) sum += detail::f1_from_counts(tp[c], fp[c], fn[c]);
  return sum / static_cast<double>(n_classes);
}

enum class SeqLabMode { token_macro, entity };

inline const char* seqlab_mode_name(SeqLabMode m) { return m == SeqLabMode::entity ? "entity" : "token_macro"; }

// Entity type of a BIO tag ("B-PER" -> "PER"); "O" stays "O".
inline std::string collapse_tag(std::string_view tag) {
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') return std::string(tag.substr(2));
  return std::string(tag);
}

struct Span {
  std::size_t begin;
  std::size_t end;  // inclusive
  std::string type;
  auto operator<=>(const Span&) const = default;
};

// Spans from a BIO sequence. An I-X that does not continue an X span opens a new one.
inline std::vector<Span> extract_spans(std::span<const std::string> tags) {
  std::vector<Span> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t == "O" || t.size() < 3 || t[1] != '-') {
      open = false;
      continue;
    }
    const std::string type = t.substr(2);
    if (t[0] == 'I' && open && spans.back().type == type) {
      spans.back().end = i;
      continue;
    }
    spans.push_back({i, i, type});
    open = true;
  }
  return spans;
}

// Sequence-labeling F1 over tag-name sequences.
//   token_macro: macro F1 at token level over the collapsed classes (B-X and
//   I-X merged into X, O included). The class set is `classes` when given,
//   otherwise everything seen in either side.
//   entity: exact span and type match, micro-averaged; F1 is 1 when both
//   sides have no spans.
inline double seqlab_f1(const std::vector<std::vector<std::string>>& preds,
                        const std::vector<std::vector<std::string>>& golds, SeqLabMode mode,
                        std::span<const std::string> classes = {}) {
  if (preds.size() != golds.size()) throw ContractError("seqlab_f1: sentence counts differ");
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (preds[s].size() != golds[s].size()) {
      throw ContractError("seqlab_f1: sentence " + std::to_string(s) + " has mismatched lengths");
    }
  }
  if (mode == SeqLabMode::entity) {
    double tp = 0, n_pred = 0, n_gold = 0;
    for (std::size_t s = 0; s < preds.size(); ++s) {
      const auto p = extract_spans(preds[s]);
      const auto g = extract_spans(golds[s]);
      n_pred += static_cast<double>(p.size());
      n_gold += static_cast<double>(g.size());
      const std::set<Span> gs(g.begin(), g.end());
      for (const auto& span : p) tp += gs.count(span) ? 1.0 : 0.0;
    }
    if (n_pred == 0 && n_gold == 0) return 1.0;
    return detail::f1_from_counts(tp, n_pred - tp, n_gold - tp);
  }
  std::set<std::string> names;
  for (const auto& c : classes) names.insert(collapse_tag(c));
  if (names.empty()) {
    for (const auto* side : {&preds, &golds}) {
      for (const auto& sent : *side) {
        for (const auto& t : sent) names.insert(collapse_tag(t));
      }
    }
  }
  const std::vector<std::string> index(names.begin(), names.end());
  auto id_of = [&](const std::string& tag) {
    const std::string c = collapse_tag(tag);
    auto it = std::lower_bound(index.begin(), index.end(), c);
    if (it == index.end() || *it != c) throw ContractError("seqlab_f1: tag '" + tag + "' not in class set");
    return static_cast<std::size_t>(it - index.begin());
  };
  std::vector<std::size_t> p, g;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    for (std::size_t t = 0; t < preds[s].size(); ++t) {
      p.push_back(id_of(preds[s][t]));
      g.push_back(id_of(golds[s][t]));
    }
  }
  if (index.empty()) return 1.0;
  return macro_f1(p, g, index.size());
}

// Same as above with tag ids into `labels`.
inline double seqlab_f1(const std::vector<std::vector<std::size_t>>& preds,
                        const std::vector<std::vector<std::size_t>>& golds, SeqLabMode mode,
                        const std::vector<std::string>& labels) {
  auto names = [&](const std::vector<std::vector<std::size_t>>& seqs) {
    std::vector<std::vector<std::string>> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) {
      std::vector<std::string> row;
      row.reserve(s.size());
      for (auto id : s) row.push_back(labels.at(id));
      out.push_back(std::move(row));
    }
    return out;
  };
  return seqlab_f1(names(preds), names(golds), mode, labels);
}

}  // namespace kdb
