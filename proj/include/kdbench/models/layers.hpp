#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kdbench/core/ops.hpp"
#include "kdbench/models/params.hpp"

namespace kdb::layers {

// Additive attention bias over key positions: 0 for real tokens, -1e9 for padding.
template <class T>
BasicTensor<T> key_padding_bias(std::span<const float> mask) {
  BasicTensor<T> bias({mask.size()}, T(0));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0f) bias[i] = T(-1e9);
  }
  return bias;
}

inline void add_attention_params(ParameterSet& ps, Initializer& init, const std::string& prefix,
                                 std::size_t width, float stddev) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    const std::string b = std::string("b") + (w + 1);
    ps.add(prefix + w, stddev > 0.0f ? init.normal({width, width}, stddev) : init.xavier(width, width));
    ps.add(prefix + b, Initializer::zeros({width}));
  }
}

// Multi-head scaled dot-product self-attention. Reads wq,bq,wk,bk,wv,bv,wo,bo
// from the cursor. `key_bias` may be null when no position is masked. A
// non-zero `query_rows` attends from the first query_rows positions only.
template <class T>
BasicVar<T> multi_head_attention(ParamCursor<T>& pc, BasicVar<T> x, std::size_t heads,
                                 const BasicTensor<T>* key_bias, std::size_t query_rows = 0) {
  BasicGraph<T>& g = *x.graph;
  BasicVar<T> wq = pc.next("wq"), bq = pc.next("bq");
  BasicVar<T> wk = pc.next("wk"), bk = pc.next("bk");
  BasicVar<T> wv = pc.next("wv"), bv = pc.next("bv");
  BasicVar<T> wo = pc.next("wo"), bo = pc.next("bo");
  const std::size_t width = x.cols();
  const std::size_t head_dim = width / heads;
  BasicVar<T> q = ops::linear(query_rows ? ops::slice(x, 0, 0, query_rows) : x, wq, bq);
  BasicVar<T> k = ops::linear(x, wk, bk);
  BasicVar<T> v = ops::linear(x, wv, bv);
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  BasicVar<T> bias;
  if (key_bias) bias = g.constant(*key_bias);
  std::vector<BasicVar<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    BasicVar<T> qh = heads == 1 ? q : ops::slice(q, 1, h * head_dim, (h + 1) * head_dim);
    BasicVar<T> kh = heads == 1 ? k : ops::slice(k, 1, h * head_dim, (h + 1) * head_dim);
    BasicVar<T> vh = heads == 1 ? v : ops::slice(v, 1, h * head_dim, (h + 1) * head_dim);
    BasicVar<T> scores = ops::scalar_mul(ops::matmul(qh, ops::transpose(kh)), scale);
    if (key_bias) scores = ops::add(scores, bias);
    outs.push_back(ops::matmul(ops::softmax(scores), vh));
  }
  BasicVar<T> merged = heads == 1 ? outs.front() : ops::concat(outs, 1);
  return ops::linear(merged, wo, bo);
}

inline void add_lstm_direction_params(ParameterSet& ps, Initializer& init, const std::string& prefix,
                                      std::size_t input_dim, std::size_t hidden) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));
  ps.add(prefix + "w_ih", init.uniform({input_dim, 4 * hidden}, bound));
  ps.add(prefix + "w_hh", init.uniform({hidden, 4 * hidden}, bound));
  Tensor bias({4 * hidden}, 0.0f);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1.0f;  // forget gate
  ps.add(prefix + "b", std::move(bias));
}

// One LSTM direction over the rows of x; gate order i, f, g, o. Returns [n, hidden].
template <class T>
BasicVar<T> lstm_direction(ParamCursor<T>& pc, BasicVar<T> x) {
  BasicVar<T> w_ih = pc.next("w_ih");
  BasicVar<T> w_hh = pc.next("w_hh");
  BasicVar<T> b = pc.next("b");
  const std::size_t hidden = w_hh.rows();
  const std::size_t len = x.rows();
  BasicVar<T> projected = ops::linear(x, w_ih, b);
  BasicVar<T> h;
  BasicVar<T> c;
  std::vector<BasicVar<T>> outputs;
  outputs.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    BasicVar<T> gates = len == 1 ? projected : ops::slice(projected, 0, t, t + 1);
    if (h) gates = ops::add(gates, ops::matmul(h, w_hh));
    BasicVar<T> i = ops::sigmoid(ops::slice(gates, 1, 0, hidden));
    BasicVar<T> f = ops::sigmoid(ops::slice(gates, 1, hidden, 2 * hidden));
    BasicVar<T> cand = ops::tanh(ops::slice(gates, 1, 2 * hidden, 3 * hidden));
    BasicVar<T> o = ops::sigmoid(ops::slice(gates, 1, 3 * hidden, 4 * hidden));
    c = c ? ops::add(ops::mul(f, c), ops::mul(i, cand)) : ops::mul(i, cand);
    h = ops::mul(o, ops::tanh(c));
    outputs.push_back(h);
  }
  return len == 1 ? outputs.front() : ops::concat(outputs, 0);
}

// Sinusoidal absolute position encoding, [len, width].
template <class T>
BasicTensor<T> sinusoidal_positions(std::size_t len, std::size_t width) {
  BasicTensor<T> pe({len, width});
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) / rate;
      pe.at(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

}  // namespace kdb::layers
