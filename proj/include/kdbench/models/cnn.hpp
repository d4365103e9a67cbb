#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdbench/models/layers.hpp"

namespace kdb {

inline Model build_cnn(const CnnSpec& spec, std::uint64_t seed) {
  spec.validate();
  Initializer init(seed);
  const std::size_t e = spec.embed_dim;
  Model m{spec, {}};
  ParameterSet& ps = m.params;
  Tensor emb = init.normal({spec.vocab_size, e}, 1.0f);
  for (std::size_t j = 0; j < e; ++j) emb.at(0, j) = 0.0f;  // [PAD]
  ps.add("embedding", std::move(emb));
  const float dw_bound = 1.0f / std::sqrt(static_cast<float>(spec.kernel_size));
  for (std::size_t b = 0; b < spec.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    ps.add(p + "dw.kernel", init.uniform({spec.kernel_size, e}, dw_bound));
    ps.add(p + "dw.bias", Initializer::zeros({e}));
    ps.add(p + "pw.weight", init.xavier(e, e));
    ps.add(p + "pw.bias", Initializer::zeros({e}));
    ps.add(p + "ln.gamma", Initializer::ones({e}));
    ps.add(p + "ln.beta", Initializer::zeros({e}));
  }
  ps.add("head.w", init.xavier(e, spec.num_classes));
  ps.add("head.b", Initializer::zeros({spec.num_classes}));
  return m;
}

namespace detail {

template <class T>
const BasicTensor<T>& cached_positions(std::size_t len, std::size_t width) {
  static thread_local std::map<std::pair<std::size_t, std::size_t>, BasicTensor<T>> cache;
  auto key = std::make_pair(len, width);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, layers::sinusoidal_positions<T>(len, width)).first;
  return it->second;
}

}  // namespace detail

// Blocks: x + dropout(relu(LN(pointwise(depthwise(x))))). Padded rows are
// zeroed before every convolution, which makes them indistinguishable from the
// zero "same" padding at the sequence edges.
template <class T>
BasicVar<T> cnn_forward(const CnnSpec& spec, BasicParameterSet<T>& params, BasicGraph<T>& g,
                        std::span<const std::size_t> ids, std::span<const float> mask) {
  ParamCursor<T> pc(params, g);
  const std::size_t len = ids.size();
  const std::size_t e = spec.embed_dim;
  BasicVar<T> x = ops::add(ops::embedding_lookup(pc.next("embedding"), ids),
                           g.constant(detail::cached_positions<T>(len, e)));
  x = ops::dropout(x, spec.dropout);

  const bool masked = detail::has_padding(mask);
  BasicTensor<T> pad_rows;
  std::vector<T> weights;
  if (masked) {
    pad_rows = BasicTensor<T>({len, e}, T(0));
    weights.resize(len);
    for (std::size_t t = 0; t < len; ++t) {
      weights[t] = static_cast<T>(mask[t]);
      if (mask[t] == 0.0f) {
        for (std::size_t j = 0; j < e; ++j) pad_rows.at(t, j) = T(1);
      }
    }
  }

  for (std::size_t b = 0; b < spec.n_blocks; ++b) {
    BasicVar<T> y = masked ? ops::masked_fill(x, pad_rows, T(0)) : x;
    BasicVar<T> k = pc.next("dw.kernel"), kb = pc.next("dw.bias");
    y = ops::conv1d_depthwise(y, k, kb);
    BasicVar<T> w = pc.next("pw.weight"), wb = pc.next("pw.bias");
    y = ops::conv1d_pointwise(y, w, wb);
    BasicVar<T> gamma = pc.next("ln.gamma");
    y = ops::relu(ops::layer_norm(y, gamma, pc.next("ln.beta")));
    x = ops::add(x, ops::dropout(y, spec.dropout));
  }
  BasicVar<T> hw = pc.next("head.w");
  BasicVar<T> hb = pc.next("head.b");
  if (spec.task == Task::classification) {
    return ops::linear(ops::mean_pool(x, std::span<const T>(weights)), hw, hb);
  }
  return ops::linear(x, hw, hb);
}

}  // namespace kdb
