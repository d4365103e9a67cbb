#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "kdbench/core/graph.hpp"

namespace kdb {

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_row: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::concat_rows: return "concat";
    case OpKind::concat_cols: return "concat";
    case OpKind::slice_rows: return "slice";
    case OpKind::slice_cols: return "slice";
    case OpKind::gather_rows: return "embedding_lookup";
    case OpKind::scatter_rows: return "scatter_rows";
    case OpKind::conv1d_depthwise: return "conv1d_depthwise";
    case OpKind::conv1d_pointwise: return "conv1d_pointwise";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::mean_pool: return "mean_pool";
    case OpKind::dropout: return "dropout";
    case OpKind::masked_fill: return "masked_fill";
    case OpKind::transpose: return "transpose";
    case OpKind::sum: return "sum";
  }
  return "?";
}

namespace ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMat<T>> cmap(const BasicTensor<T>& t) {
  return Eigen::Map<const RowMat<T>>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
template <class T>
Eigen::Map<RowMat<T>> mmap(BasicTensor<T>& t) {
  return Eigen::Map<RowMat<T>>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

template <class T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

template <class T>
void require_same_graph(BasicVar<T> a, BasicVar<T> b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
}

template <class T>
BasicVar<T> finish(BasicGraph<T>& g, BasicNode<T>& n) {
  if (!n.value.all_finite()) {
    throw NumericError(std::string(op_name(n.kind)) + " produced a non-finite value");
  }
  return g.last();
}

}  // namespace detail

// [m,k] x [k,n] -> [m,n]
template <class T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
  detail::require_same_graph(a, b);
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  const BasicTensor<T>& bv = b.value();
  detail::require_rank(av, 2, "matmul");
  detail::require_rank(bv, 2, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  BasicNode<T>& n = g.push(OpKind::matmul, {a.id, b.id});
  n.value.resize({av.rows(), bv.cols()});
  detail::mmap(n.value).noalias() = detail::cmap(av) * detail::cmap(bv);
  return detail::finish(g, n);
}

// Elementwise a + b for equal shapes; when b is 1-D with b.size == a.cols it is
// broadcast over the rows of a.
template <class T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
  detail::require_same_graph(a, b);
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  const BasicTensor<T>& bv = b.value();
  if (av.shape() == bv.shape()) {
    BasicNode<T>& n = g.push(OpKind::add, {a.id, b.id});
    n.value.resize(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] + bv[i];
    return detail::finish(g, n);
  }
  if (bv.rank() == 1 && av.rank() == 2 && bv.size() == av.cols()) {
    BasicNode<T>& n = g.push(OpKind::add_row, {a.id, b.id});
    n.value.resize(av.shape());
    const std::size_t c = av.cols();
    for (std::size_t r = 0; r < av.rows(); ++r) {
      for (std::size_t j = 0; j < c; ++j) n.value[r * c + j] = av[r * c + j] + bv[j];
    }
    return detail::finish(g, n);
  }
  throw DimensionError("add: " + shape_str(av.shape()) + " + " + shape_str(bv.shape()));
}

template <class T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
  detail::require_same_graph(a, b);
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  const BasicTensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
  }
  BasicNode<T>& n = g.push(OpKind::mul, {a.id, b.id});
  n.value.resize(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] * bv[i];
  return detail::finish(g, n);
}

template <class T>
BasicVar<T> scalar_mul(BasicVar<T> a, std::type_identity_t<T> s) {
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  BasicNode<T>& n = g.push(OpKind::scalar_mul, {a.id});
  n.scalar = s;
  n.value.resize(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] * s;
  return detail::finish(g, n);
}

template <class T>
BasicVar<T> add_scalar(BasicVar<T> a, std::type_identity_t<T> s) {
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  BasicNode<T>& n = g.push(OpKind::add_scalar, {a.id});
  n.scalar = s;
  n.value.resize(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] + s;
  return detail::finish(g, n);
}

template <class T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) { return add(a, scalar_mul(b, -1.0f)); }

// Concatenate 2-D tensors along axis 0 (rows) or 1 (columns).
template <class T>
BasicVar<T> concat(std::span<const BasicVar<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  BasicGraph<T>& g = *parts.front().graph;
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (const BasicVar<T>& p : parts) {
    detail::require_same_graph(parts.front(), p);
    const BasicTensor<T>& v = p.value();
    detail::require_rank(v, 2, "concat");
    if (axis == 0) {
      if (cols == 0) cols = v.cols();
      if (v.cols() != cols) throw DimensionError("concat: column count mismatch");
      rows += v.rows();
    } else {
      if (rows == 0) rows = v.rows();
      if (v.rows() != rows) throw DimensionError("concat: row count mismatch");
      cols += v.cols();
    }
  }
  BasicNode<T>& n = g.push(axis == 0 ? OpKind::concat_rows : OpKind::concat_cols, {});
  n.inputs.clear();
  for (const BasicVar<T>& p : parts) {
    n.inputs.push_back(p.id);
    if (g.recording() && g.node(p.id).requires_grad) n.requires_grad = true;
  }
  n.value.resize({rows, cols});
  std::size_t offset = 0;
  for (const BasicVar<T>& p : parts) {
    const BasicTensor<T>& v = p.value();
    if (axis == 0) {
      std::copy(v.data().begin(), v.data().end(), n.value.data().begin() + offset * cols);
      offset += v.rows();
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(v.data().begin() + r * v.cols(), v.cols(),
                    n.value.data().begin() + r * cols + offset);
      }
      offset += v.cols();
    }
  }
  return g.last();
}

template <class T>
BasicVar<T> concat(std::initializer_list<BasicVar<T>> parts, std::size_t axis) {
  return concat(std::span<const BasicVar<T>>(parts.begin(), parts.size()), axis);
}

template <class T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, std::size_t axis) {
  return concat(std::span<const BasicVar<T>>(parts), axis);
}

// Half-open range [begin, end) along axis 0 or 1 of a 2-D tensor.
template <class T>
BasicVar<T> slice(BasicVar<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  detail::require_rank(av, 2, "slice");
  if (axis > 1) throw DimensionError("slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? av.rows() : av.cols();
  if (begin >= end || end > extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside extent " + std::to_string(extent));
  }
  BasicNode<T>& n = g.push(axis == 0 ? OpKind::slice_rows : OpKind::slice_cols, {a.id});
  n.a0 = begin;
  n.a1 = end;
  const std::size_t c = av.cols();
  if (axis == 0) {
    n.value.resize({end - begin, c});
    std::copy(av.data().begin() + begin * c, av.data().begin() + end * c, n.value.data().begin());
  } else {
    const std::size_t w = end - begin;
    n.value.resize({av.rows(), w});
    for (std::size_t r = 0; r < av.rows(); ++r) {
      std::copy_n(av.data().begin() + r * c + begin, w, n.value.data().begin() + r * w);
    }
  }
  return g.last();
}

// Rows of `table` selected by `ids`: [V,H] -> [len(ids),H].
template <class T>
BasicVar<T> embedding_lookup(BasicVar<T> table, std::span<const std::size_t> ids) {
  BasicGraph<T>& g = *table.graph;
  const BasicTensor<T>& tv = table.value();
  detail::require_rank(tv, 2, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  for (auto id : ids) {
    if (id >= tv.rows()) {
      throw ContractError("embedding_lookup: id " + std::to_string(id) + " >= vocab size " +
                          std::to_string(tv.rows()));
    }
  }
  BasicNode<T>& n = g.push(OpKind::gather_rows, {table.id});
  n.index.assign(ids.begin(), ids.end());
  const std::size_t h = tv.cols();
  n.value.resize({ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data().begin() + ids[i] * h, h, n.value.data().begin() + i * h);
  }
  return g.last();
}

template <class T>
BasicVar<T> gather_rows(BasicVar<T> x, std::span<const std::size_t> rows) { return embedding_lookup(x, rows); }

// Inverse of gather_rows: row i of x goes to row rows[i] of a zero [total, H] tensor.
template <class T>
BasicVar<T> scatter_rows(BasicVar<T> x, std::span<const std::size_t> rows, std::size_t total) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  detail::require_rank(xv, 2, "scatter_rows");
  if (rows.size() != xv.rows()) throw DimensionError("scatter_rows: index count mismatch");
  BasicNode<T>& n = g.push(OpKind::scatter_rows, {x.id});
  n.index.assign(rows.begin(), rows.end());
  const std::size_t h = xv.cols();
  n.value.resize({total, h}, 0.0f);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total) throw DimensionError("scatter_rows: row index out of range");
    std::copy_n(xv.data().begin() + i * h, h, n.value.data().begin() + rows[i] * h);
  }
  return g.last();
}

// Per-channel 1-D convolution with zero "same" padding.
// x [n,C], kernel [K,C] (K odd), bias [C] -> [n,C].
template <class T>
BasicVar<T> conv1d_depthwise(BasicVar<T> x, BasicVar<T> kernel, BasicVar<T> bias) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  const BasicTensor<T>& kv = kernel.value();
  const BasicTensor<T>& bv = bias.value();
  detail::require_rank(xv, 2, "conv1d_depthwise");
  detail::require_rank(kv, 2, "conv1d_depthwise");
  const std::size_t len = xv.rows();
  const std::size_t ch = xv.cols();
  const std::size_t k = kv.rows();
  if (kv.cols() != ch || bv.size() != ch) throw DimensionError("conv1d_depthwise: channel mismatch");
  if (k % 2 == 0) throw DimensionError("conv1d_depthwise: kernel size must be odd");
  BasicNode<T>& n = g.push(OpKind::conv1d_depthwise, {x.id, kernel.id, bias.id});
  n.value.resize({len, ch});
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t t = 0; t < len; ++t) {
    T* out = n.value.data().data() + t * ch;
    for (std::size_t c = 0; c < ch; ++c) out[c] = bv[c];
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const T* in = xv.data().data() + static_cast<std::size_t>(src) * ch;
      const T* w = kv.data().data() + j * ch;
      for (std::size_t c = 0; c < ch; ++c) out[c] += w[c] * in[c];
    }
  }
  return detail::finish(g, n);
}

// 1x1 convolution mixing channels: x [n,C] * weight [C,C'] + bias [C'].
template <class T>
BasicVar<T> conv1d_pointwise(BasicVar<T> x, BasicVar<T> weight, BasicVar<T> bias) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  const BasicTensor<T>& wv = weight.value();
  const BasicTensor<T>& bv = bias.value();
  detail::require_rank(xv, 2, "conv1d_pointwise");
  detail::require_rank(wv, 2, "conv1d_pointwise");
  if (wv.rows() != xv.cols() || bv.size() != wv.cols()) {
    throw DimensionError("conv1d_pointwise: channel mismatch");
  }
  BasicNode<T>& n = g.push(OpKind::conv1d_pointwise, {x.id, weight.id, bias.id});
  n.value.resize({xv.rows(), wv.cols()});
  auto out = detail::mmap(n.value);
  out.noalias() = detail::cmap(xv) * detail::cmap(wv);
  out.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data().data(),
                                                        static_cast<Eigen::Index>(bv.size()));
  return detail::finish(g, n);
}

// Row-wise layer normalisation with affine gamma/beta [H].
template <class T>
BasicVar<T> layer_norm(BasicVar<T> x, BasicVar<T> gamma, BasicVar<T> beta, std::type_identity_t<T> eps = T(1e-5)) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  const BasicTensor<T>& gv = gamma.value();
  const BasicTensor<T>& bv = beta.value();
  detail::require_rank(xv, 2, "layer_norm");
  const std::size_t h = xv.cols();
  if (gv.size() != h || bv.size() != h) throw DimensionError("layer_norm: affine size mismatch");
  BasicNode<T>& n = g.push(OpKind::layer_norm, {x.id, gamma.id, beta.id});
  n.value.resize(xv.shape());
  n.aux.resize(xv.rows() * 2);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const T* in = xv.data().data() + r * h;
    T mean = 0.0f;
    for (std::size_t j = 0; j < h; ++j) mean += in[j];
    mean /= static_cast<T>(h);
    T var = 0.0f;
    for (std::size_t j = 0; j < h; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(h);
    const T rstd = 1.0f / std::sqrt(var + eps);
    n.aux[2 * r] = mean;
    n.aux[2 * r + 1] = rstd;
    T* out = n.value.data().data() + r * h;
    for (std::size_t j = 0; j < h; ++j) out[j] = (in[j] - mean) * rstd * gv[j] + bv[j];
  }
  return detail::finish(g, n);
}

namespace detail {

template <class T, class F>
BasicVar<T> unary(BasicVar<T> a, OpKind kind, F f) {
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  BasicNode<T>& n = g.push(kind, {a.id});
  n.value.resize(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = f(av[i]);
  return finish(g, n);
}

}  // namespace detail

template <class T>
BasicVar<T> relu(BasicVar<T> a) {
  return detail::unary(a, OpKind::relu, [](T v) { return v > 0.0f ? v : 0.0f; });
}
template <class T>
BasicVar<T> tanh(BasicVar<T> a) {
  return detail::unary(a, OpKind::tanh, [](T v) { return std::tanh(v); });
}
template <class T>
BasicVar<T> sigmoid(BasicVar<T> a) {
  return detail::unary(a, OpKind::sigmoid, [](T v) { return 1.0f / (1.0f + std::exp(-v)); });
}

// Softmax over the last axis, row by row.
template <class T>
BasicVar<T> softmax(BasicVar<T> a) {
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  BasicNode<T>& n = g.push(OpKind::softmax, {a.id});
  n.value.resize(av.shape());
  const std::size_t c = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const T* in = av.data().data() + r * c;
    T* out = n.value.data().data() + r * c;
    const T mx = *std::max_element(in, in + c);
    T total = 0.0f;
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    for (std::size_t j = 0; j < c; ++j) out[j] /= total;
  }
  return detail::finish(g, n);
}

template <class T>
BasicVar<T> log_softmax(BasicVar<T> a) {
  BasicGraph<T>& g = *a.graph;
  const BasicTensor<T>& av = a.value();
  BasicNode<T>& n = g.push(OpKind::log_softmax, {a.id});
  n.value.resize(av.shape());
  const std::size_t c = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const T* in = av.data().data() + r * c;
    T* out = n.value.data().data() + r * c;
    const T mx = *std::max_element(in, in + c);
    T total = 0.0f;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(in[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[j] = in[j] - lse;
  }
  return detail::finish(g, n);
}

// Softmax of a / T; T == 1 skips the scaling node.
template <class T>
BasicVar<T> softmax_with_temperature(BasicVar<T> a, std::type_identity_t<T> temperature) {
  if (!(temperature > 0.0f) || !std::isfinite(temperature)) {
    throw ParameterError("temperature must be positive and finite");
  }
  return temperature == 1.0f ? softmax(a) : softmax(scalar_mul(a, 1.0f / temperature));
}

// Weighted average over rows: [n,H] -> [1,H]. Empty weights mean uniform;
// otherwise weights[t] is 1 for real positions and 0 for padding.
template <class T>
BasicVar<T> mean_pool(BasicVar<T> x, std::type_identity_t<std::span<const T>> weights = {}) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  detail::require_rank(xv, 2, "mean_pool");
  const std::size_t len = xv.rows();
  const std::size_t h = xv.cols();
  BasicNode<T>& n = g.push(OpKind::mean_pool, {x.id});
  if (weights.empty()) {
    n.aux.assign(len, 1.0f);
  } else {
    if (weights.size() != len) throw DimensionError("mean_pool: mask length mismatch");
    n.aux.assign(weights.begin(), weights.end());
  }
  T total = 0.0f;
  for (T w : n.aux) total += w;
  if (total <= 0.0f) throw ContractError("mean_pool: no unmasked positions");
  for (T& w : n.aux) w /= total;
  n.value.resize({1, h}, 0.0f);
  for (std::size_t t = 0; t < len; ++t) {
    const T w = n.aux[t];
    if (w == 0.0f) continue;
    for (std::size_t j = 0; j < h; ++j) n.value[j] += w * xv[t * h + j];
  }
  return detail::finish(g, n);
}

// Inverted dropout. Identity outside training mode or when rate == 0.
template <class T>
BasicVar<T> dropout(BasicVar<T> x, std::type_identity_t<T> rate) {
  if (rate < 0.0f || rate >= 1.0f) throw ParameterError("dropout rate must be in [0, 1)");
  BasicGraph<T>& g = *x.graph;
  if (!g.training() || rate == 0.0f) return x;
  const BasicTensor<T>& xv = x.value();
  BasicNode<T>& n = g.push(OpKind::dropout, {x.id});
  n.value.resize(xv.shape());
  n.aux.resize(xv.size());
  std::uniform_real_distribution<T> u(0.0f, 1.0f);
  const T keep_scale = 1.0f / (1.0f - rate);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    n.aux[i] = u(g.rng()) < rate ? 0.0f : keep_scale;
    n.value[i] = xv[i] * n.aux[i];
  }
  return g.last();
}

// Where mask is 1 the output is `value`; elsewhere it is x. Mask must be binary.
template <class T>
BasicVar<T> masked_fill(BasicVar<T> x, const std::type_identity_t<BasicTensor<T>>& mask, std::type_identity_t<T> value) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  if (mask.shape() != xv.shape()) throw DimensionError("masked_fill: mask shape mismatch");
  for (T m : mask.data()) {
    if (m != 0.0f && m != 1.0f) throw ContractError("masked_fill: mask must be binary");
  }
  BasicNode<T>& n = g.push(OpKind::masked_fill, {x.id});
  n.aux.assign(mask.data().begin(), mask.data().end());
  n.value.resize(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = n.aux[i] != 0.0f ? value : xv[i];
  return detail::finish(g, n);
}

template <class T>
BasicVar<T> transpose(BasicVar<T> x) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  detail::require_rank(xv, 2, "transpose");
  BasicNode<T>& n = g.push(OpKind::transpose, {x.id});
  n.value.resize({xv.cols(), xv.rows()});
  detail::mmap(n.value) = detail::cmap(xv).transpose();
  return g.last();
}

// Sum of all elements -> shape [1].
template <class T>
BasicVar<T> sum(BasicVar<T> x) {
  BasicGraph<T>& g = *x.graph;
  const BasicTensor<T>& xv = x.value();
  BasicNode<T>& n = g.push(OpKind::sum, {x.id});
  T total = 0.0f;
  for (T v : xv.data()) total += v;
  n.value.resize({1});
  n.value[0] = total;
  return detail::finish(g, n);
}

template <class T>
BasicVar<T> mean(BasicVar<T> x) { return scalar_mul(sum(x), 1.0f / static_cast<T>(x.value().size())); }

template <class T>
BasicVar<T> linear(BasicVar<T> x, BasicVar<T> weight, BasicVar<T> bias) { return add(matmul(x, weight), bias); }

namespace detail {

template <class T>
void backward_node(BasicGraph<T>& g, int id) {
  BasicNode<T>& n = g.node_mut(id);
  const BasicTensor<T>& gy = n.grad;
  auto needs = [&](std::size_t i) { return g.node(n.inputs[i]).requires_grad; };
  auto gin = [&](std::size_t i) -> BasicTensor<T>& { return g.grad_buffer(n.inputs[i]); };
  auto val = [&](std::size_t i) -> const BasicTensor<T>& { return g.value(n.inputs[i]); };

  switch (n.kind) {
    case OpKind::leaf:
    case OpKind::constant:
      break;
    case OpKind::matmul: {
      if (needs(0)) mmap(gin(0)).noalias() += cmap(gy) * cmap(val(1)).transpose();
      if (needs(1)) mmap(gin(1)).noalias() += cmap(val(0)).transpose() * cmap(gy);
      break;
    }
    case OpKind::add: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        BasicTensor<T>& ga = gin(k);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      break;
    }
    case OpKind::add_row: {
      if (needs(0)) {
        BasicTensor<T>& ga = gin(0);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (needs(1)) {
        BasicTensor<T>& gb = gin(1);
        const std::size_t c = gy.cols();
        for (std::size_t r = 0; r < gy.rows(); ++r) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[r * c + j];
        }
      }
      break;
    }
    case OpKind::mul: {
      if (needs(0)) {
        BasicTensor<T>& ga = gin(0);
        const BasicTensor<T>& b = val(1);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
      }
      if (needs(1)) {
        BasicTensor<T>& gb = gin(1);
        const BasicTensor<T>& a = val(0);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
      }
      break;
    }
    case OpKind::scalar_mul: {
      BasicTensor<T>& ga = gin(0);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.scalar;
      break;
    }
    case OpKind::add_scalar: {
      BasicTensor<T>& ga = gin(0);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      break;
    }
    case OpKind::concat_rows:
    case OpKind::concat_cols: {
      const std::size_t cols = gy.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const BasicTensor<T>& v = val(k);
        if (needs(k)) {
          BasicTensor<T>& gp = gin(k);
          if (n.kind == OpKind::concat_rows) {
            for (std::size_t i = 0; i < v.size(); ++i) gp[i] += gy[offset * cols + i];
          } else {
            for (std::size_t r = 0; r < v.rows(); ++r) {
              for (std::size_t j = 0; j < v.cols(); ++j) {
                gp[r * v.cols() + j] += gy[r * cols + offset + j];
              }
            }
          }
        }
        offset += n.kind == OpKind::concat_rows ? v.rows() : v.cols();
      }
      break;
    }
    case OpKind::slice_rows: {
      BasicTensor<T>& ga = gin(0);
      const std::size_t c = ga.cols();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[n.a0 * c + i] += gy[i];
      break;
    }
    case OpKind::slice_cols: {
      BasicTensor<T>& ga = gin(0);
      const std::size_t c = ga.cols();
      const std::size_t w = n.a1 - n.a0;
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        for (std::size_t j = 0; j < w; ++j) ga[r * c + n.a0 + j] += gy[r * w + j];
      }
      break;
    }
    case OpKind::gather_rows: {
      BasicTensor<T>& gt = gin(0);
      const std::size_t h = gy.cols();
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        T* dst = gt.data().data() + n.index[i] * h;
        const T* src = gy.data().data() + i * h;
        for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
      }
      break;
    }
    case OpKind::scatter_rows: {
      BasicTensor<T>& gx = gin(0);
      const std::size_t h = gy.cols();
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        const T* src = gy.data().data() + n.index[i] * h;
        T* dst = gx.data().data() + i * h;
        for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
      }
      break;
    }
    case OpKind::conv1d_depthwise: {
      const BasicTensor<T>& xv = val(0);
      const BasicTensor<T>& kv = val(1);
      const std::size_t len = xv.rows();
      const std::size_t ch = xv.cols();
      const std::size_t k = kv.rows();
      const auto pad = static_cast<std::ptrdiff_t>(k / 2);
      BasicTensor<T>* gx = needs(0) ? &gin(0) : nullptr;
      BasicTensor<T>* gk = needs(1) ? &gin(1) : nullptr;
      BasicTensor<T>* gb = needs(2) ? &gin(2) : nullptr;
      for (std::size_t t = 0; t < len; ++t) {
        const T* dy = gy.data().data() + t * ch;
        if (gb) {
          for (std::size_t c = 0; c < ch; ++c) (*gb)[c] += dy[c];
        }
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const auto s = static_cast<std::size_t>(src);
          for (std::size_t c = 0; c < ch; ++c) {
            if (gx) (*gx)[s * ch + c] += kv[j * ch + c] * dy[c];
            if (gk) (*gk)[j * ch + c] += xv[s * ch + c] * dy[c];
          }
        }
      }
      break;
    }
    case OpKind::conv1d_pointwise: {
      if (needs(0)) mmap(gin(0)).noalias() += cmap(gy) * cmap(val(1)).transpose();
      if (needs(1)) mmap(gin(1)).noalias() += cmap(val(0)).transpose() * cmap(gy);
      if (needs(2)) {
        BasicTensor<T>& gb = gin(2);
        const std::size_t c = gy.cols();
        for (std::size_t r = 0; r < gy.rows(); ++r) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[r * c + j];
        }
      }
      break;
    }
    case OpKind::layer_norm: {
      const BasicTensor<T>& xv = val(0);
      const BasicTensor<T>& gv = val(1);
      const std::size_t h = xv.cols();
      BasicTensor<T>* gx = needs(0) ? &gin(0) : nullptr;
      BasicTensor<T>* gg = needs(1) ? &gin(1) : nullptr;
      BasicTensor<T>* gbeta = needs(2) ? &gin(2) : nullptr;
      std::vector<T> xhat(h);
      std::vector<T> dxhat(h);
      for (std::size_t r = 0; r < xv.rows(); ++r) {
        const T mu = n.aux[2 * r];
        const T rstd = n.aux[2 * r + 1];
        const T* dy = gy.data().data() + r * h;
        T mean_d = 0.0f;
        T mean_dx = 0.0f;
        for (std::size_t j = 0; j < h; ++j) {
          xhat[j] = (xv[r * h + j] - mu) * rstd;
          dxhat[j] = dy[j] * gv[j];
          mean_d += dxhat[j];
          mean_dx += dxhat[j] * xhat[j];
          if (gg) (*gg)[j] += dy[j] * xhat[j];
          if (gbeta) (*gbeta)[j] += dy[j];
        }
        mean_d /= static_cast<T>(h);
        mean_dx /= static_cast<T>(h);
        if (gx) {
          for (std::size_t j = 0; j < h; ++j) {
            (*gx)[r * h + j] += rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
          }
        }
      }
      break;
    }
    case OpKind::relu: {
      BasicTensor<T>& ga = gin(0);
      const BasicTensor<T>& a = val(0);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (a[i] > 0.0f) ga[i] += gy[i];
      }
      break;
    }
    case OpKind::tanh: {
      BasicTensor<T>& ga = gin(0);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const T y = n.value[i];
        ga[i] += gy[i] * (1.0f - y * y);
      }
      break;
    }
    case OpKind::sigmoid: {
      BasicTensor<T>& ga = gin(0);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const T y = n.value[i];
        ga[i] += gy[i] * y * (1.0f - y);
      }
      break;
    }
    case OpKind::softmax: {
      BasicTensor<T>& ga = gin(0);
      const std::size_t c = gy.cols();
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        T dot = 0.0f;
        for (std::size_t j = 0; j < c; ++j) dot += gy[r * c + j] * n.value[r * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          ga[r * c + j] += n.value[r * c + j] * (gy[r * c + j] - dot);
        }
      }
      break;
    }
    case OpKind::log_softmax: {
      BasicTensor<T>& ga = gin(0);
      const std::size_t c = gy.cols();
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        T total = 0.0f;
        for (std::size_t j = 0; j < c; ++j) total += gy[r * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          ga[r * c + j] += gy[r * c + j] - std::exp(n.value[r * c + j]) * total;
        }
      }
      break;
    }
    case OpKind::mean_pool: {
      BasicTensor<T>& gx = gin(0);
      const std::size_t h = gy.cols();
      for (std::size_t t = 0; t < n.aux.size(); ++t) {
        const T w = n.aux[t];
        if (w == 0.0f) continue;
        for (std::size_t j = 0; j < h; ++j) gx[t * h + j] += w * gy[j];
      }
      break;
    }
    case OpKind::dropout:
    case OpKind::masked_fill: {
      BasicTensor<T>& ga = gin(0);
      if (n.kind == OpKind::dropout) {
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.aux[i];
      } else {
        for (std::size_t i = 0; i < gy.size(); ++i) {
          if (n.aux[i] == 0.0f) ga[i] += gy[i];
        }
      }
      break;
    }
    case OpKind::transpose: {
      mmap(gin(0)) += cmap(gy).transpose();
      break;
    }
    case OpKind::sum: {
      BasicTensor<T>& ga = gin(0);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[0];
      break;
    }
  }
}

}  // namespace detail
}  // namespace ops

template <class T>
void BasicGraph<T>::backward(BasicVar<T> loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (!recording()) throw ContractError("backward: graph is in inference mode");
  const BasicTensor<T>& lv = value(loss.id);
  if (lv.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  }
  for (std::size_t i = 0; i < count_; ++i) nodes_[i].has_grad = false;
  BasicNode<T>& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (!root.requires_grad) return;
  grad_buffer(loss.id)[0] += 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    BasicNode<T>& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.param) continue;
    if (!n.has_grad) continue;
    ops::detail::backward_node<T>(*this, id);
  }
}

}  // namespace kdb
