#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kdbench/models/layers.hpp"

namespace kdb {

inline Model build_bilstm(const BiLstmSpec& spec, std::uint64_t seed) {
  spec.validate();
  Initializer init(seed);
  Model m{spec, {}};
  ParameterSet& ps = m.params;
  Tensor emb = init.normal({spec.vocab_size, spec.embed_dim}, 1.0f);
  for (std::size_t j = 0; j < spec.embed_dim; ++j) emb.at(0, j) = 0.0f;  // [PAD]
  ps.add("embedding", std::move(emb));
  for (std::size_t l = 0; l < spec.lstm_layers; ++l) {
    const std::size_t in = l == 0 ? spec.embed_dim : 2 * spec.hidden_dim;
    const std::string p = "lstm." + std::to_string(l) + ".";
    layers::add_lstm_direction_params(ps, init, p + "fwd.", in, spec.hidden_dim);
    layers::add_lstm_direction_params(ps, init, p + "bwd.", in, spec.hidden_dim);
  }
  layers::add_attention_params(ps, init, "attn.", 2 * spec.hidden_dim, 0.0f);
  ps.add("head.w", init.xavier(2 * spec.hidden_dim, spec.num_classes));
  ps.add("head.b", Initializer::zeros({spec.num_classes}));
  return m;
}

// Padding positions are dropped before the recurrence, so neither direction
// ever reads them; sequence-labeling logits are scattered back with zero rows
// at padded positions.
template <class T>
BasicVar<T> bilstm_forward(const BiLstmSpec& spec, BasicParameterSet<T>& params, BasicGraph<T>& g,
                           std::span<const std::size_t> ids, std::span<const float> mask) {
  ParamCursor<T> pc(params, g);
  const std::size_t len = ids.size();
  std::vector<std::size_t> keep;
  std::vector<std::size_t> kept_ids;
  if (detail::has_padding(mask)) {
    for (std::size_t t = 0; t < len; ++t) {
      if (mask[t] != 0.0f) {
        keep.push_back(t);
        kept_ids.push_back(ids[t]);
      }
    }
  }
  std::span<const std::size_t> active = keep.empty() ? ids : std::span<const std::size_t>(kept_ids);
  const std::size_t n = active.size();

  BasicVar<T> x = ops::dropout(ops::embedding_lookup(pc.next("embedding"), active), spec.dropout);
  std::vector<std::size_t> reversed(n);
  for (std::size_t t = 0; t < n; ++t) reversed[t] = n - 1 - t;
  for (std::size_t l = 0; l < spec.lstm_layers; ++l) {
    BasicVar<T> fwd = layers::lstm_direction(pc, x);
    BasicVar<T> bwd = n == 1 ? layers::lstm_direction(pc, x)
                             : ops::gather_rows(layers::lstm_direction(pc, ops::gather_rows(x, reversed)),
                                                reversed);
    x = ops::dropout(ops::concat({fwd, bwd}, 1), spec.dropout);
  }
  x = ops::add(x, layers::multi_head_attention(pc, x, spec.attn_heads, static_cast<const BasicTensor<T>*>(nullptr)));
  BasicVar<T> hw = pc.next("head.w");
  BasicVar<T> hb = pc.next("head.b");
  if (spec.task == Task::classification) return ops::linear(ops::slice(x, 0, 0, 1), hw, hb);
  BasicVar<T> logits = ops::linear(x, hw, hb);
  return keep.empty() ? logits : ops::scatter_rows(logits, keep, len);
}

}  // namespace kdb
