#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "kdbench/models/layers.hpp"

namespace kdb {

inline Model build_transformer(const TransformerSpec& spec, std::uint64_t seed) {
  spec.validate();
  Initializer init(seed);
  const std::size_t h = spec.embed_dim;
  const float sd = 0.02f;
  Model m{spec, {}};
  ParameterSet& ps = m.params;
  ps.add("embeddings.token", init.normal({spec.vocab_size, h}, sd));
  ps.add("embeddings.position", init.normal({spec.max_len, h}, sd));
  ps.add("embeddings.ln.gamma", Initializer::ones({h}));
  ps.add("embeddings.ln.beta", Initializer::zeros({h}));
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    layers::add_attention_params(ps, init, p + "attn.", h, sd);
    ps.add(p + "ln1.gamma", Initializer::ones({h}));
    ps.add(p + "ln1.beta", Initializer::zeros({h}));
    ps.add(p + "ffn.w1", init.normal({h, spec.ffn()}, sd));
    ps.add(p + "ffn.b1", Initializer::zeros({spec.ffn()}));
    ps.add(p + "ffn.w2", init.normal({spec.ffn(), h}, sd));
    ps.add(p + "ffn.b2", Initializer::zeros({h}));
    ps.add(p + "ln2.gamma", Initializer::ones({h}));
    ps.add(p + "ln2.beta", Initializer::zeros({h}));
  }
  ps.add("head.w", init.normal({h, spec.num_classes}, sd));
  ps.add("head.b", Initializer::zeros({spec.num_classes}));
  return m;
}

// Post-LN encoder: token + learned position embeddings, L blocks of
// attention and ReLU feed-forward, head on position 0 or on every position.
// Inference graphs for classification run the last block for position 0 only,
// since no other row of it reaches the head.
template <class T>
BasicVar<T> transformer_forward(const TransformerSpec& spec, BasicParameterSet<T>& params, BasicGraph<T>& g,
                                std::span<const std::size_t> ids, std::span<const float> mask) {
  ParamCursor<T> pc(params, g);
  const std::size_t len = ids.size();
  BasicVar<T> tok = pc.next("embeddings.token");
  BasicVar<T> pos = pc.next("embeddings.position");
  const auto& positions = detail::iota_positions(len);
  BasicVar<T> x = ops::add(ops::embedding_lookup(tok, ids),
                           ops::embedding_lookup(pos, std::span(positions.data(), len)));
  BasicVar<T> gamma = pc.next("embeddings.ln.gamma");
  x = ops::layer_norm(x, gamma, pc.next("embeddings.ln.beta"));
  x = ops::dropout(x, spec.dropout);

  BasicTensor<T> bias;
  const bool masked = detail::has_padding(mask);
  if (masked) bias = layers::key_padding_bias<T>(mask);

  const bool prune = !g.recording() && spec.task == Task::classification;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::size_t rows = prune && l + 1 == spec.layers ? 1 : 0;
    BasicVar<T> attn = layers::multi_head_attention(pc, x, spec.attn_heads, masked ? &bias : nullptr, rows);
    if (rows) x = ops::slice(x, 0, 0, rows);
    BasicVar<T> g1 = pc.next("ln1.gamma");
    x = ops::layer_norm(ops::add(x, ops::dropout(attn, spec.dropout)), g1, pc.next("ln1.beta"));
    BasicVar<T> w1 = pc.next("ffn.w1"), b1 = pc.next("ffn.b1");
    BasicVar<T> w2 = pc.next("ffn.w2"), b2 = pc.next("ffn.b2");
    BasicVar<T> ff = ops::linear(ops::relu(ops::linear(x, w1, b1)), w2, b2);
    BasicVar<T> g2 = pc.next("ln2.gamma");
    x = ops::layer_norm(ops::add(x, ops::dropout(ff, spec.dropout)), g2, pc.next("ln2.beta"));
  }
  BasicVar<T> hw = pc.next("head.w");
  BasicVar<T> hb = pc.next("head.b");
  if (spec.task == Task::classification) return ops::linear(x.rows() == 1 ? x : ops::slice(x, 0, 0, 1), hw, hb);
  return ops::linear(x, hw, hb);
}

}  // namespace kdb
