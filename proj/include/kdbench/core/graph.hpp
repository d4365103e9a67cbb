#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "kdbench/core/error.hpp"
#include "kdbench/core/tensor.hpp"

namespace kdb {

// A named trainable tensor. `grad` is sized lazily by the first backward pass
// that reaches it and accumulates until zero_grad().
template <class T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = BasicTensor<T>(value.shape(), T(0));
    } else {
      grad.fill(T(0));
    }
  }
};

using Parameter = BasicParameter<float>;

enum class OpKind : std::uint8_t {
  leaf,
  constant,
  matmul,
  add,
  add_row,
  mul,
  scalar_mul,
  add_scalar,
  concat_rows,
  concat_cols,
  slice_rows,
  slice_cols,
  gather_rows,
  scatter_rows,
  conv1d_depthwise,
  conv1d_pointwise,
  layer_norm,
  relu,
  tanh,
  sigmoid,
  softmax,
  log_softmax,
  mean_pool,
  dropout,
  masked_fill,
  transpose,
  sum,
};

const char* op_name(OpKind kind);

template <class T>
class BasicGraph;

// Handle to a node on a Graph. Cheap to copy; valid until the graph is reset.
template <class T>
struct BasicVar {
  BasicGraph<T>* graph = nullptr;
  int id = -1;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  explicit operator bool() const noexcept { return graph != nullptr && id >= 0; }
};

// One recorded operation. Saved activations for backward live in `aux`/`index`.
template <class T>
struct BasicNode {
  OpKind kind = OpKind::leaf;
  std::vector<int> inputs;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicParameter<T>* param = nullptr;
  bool requires_grad = false;
  bool has_grad = false;
  T scalar = T(0);
  std::size_t a0 = 0;
  std::size_t a1 = 0;
  std::vector<T> aux;
  std::vector<std::size_t> index;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
// is already topologically sorted; backward walks it once in reverse.
//
// In inference mode nothing is marked as requiring gradients and reset() keeps
// every node's buffers, so a graph reused across calls stops allocating once
// it has seen the largest input.
template <class T>
class BasicGraph {
 public:
  using Tensor = BasicTensor<T>;
  using Var = BasicVar<T>;
  using Node = BasicNode<T>;
  using Parameter = BasicParameter<T>;

  enum class Mode { record, inference };

  explicit BasicGraph(Mode mode = Mode::record, bool training = false, std::uint64_t seed = 0)
      : mode_(mode), training_(training), rng_(seed) {}

  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  bool recording() const noexcept { return mode_ == Mode::record; }
  bool training() const noexcept { return training_; }
  void set_training(bool on) noexcept { training_ = on; }
  std::mt19937_64& rng() noexcept { return rng_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  std::size_t size() const noexcept { return count_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  void reset() noexcept { count_ = 0; }

  Var constant(const Tensor& value) {
    Node& n = push(OpKind::constant, {});
    n.value = value;
    return last();
  }

  Var input(const Tensor& value, bool requires_grad = true) {
    Node& n = push(OpKind::leaf, {});
    n.value = value;
    n.requires_grad = requires_grad && recording();
    return last();
  }

  Var param(Parameter& p) {
    Node& n = push(OpKind::leaf, {});
    n.param = &p;
    n.requires_grad = recording();
    return last();
  }

  const Tensor& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param ? n.param->value : n.value;
  }
  const Tensor& value(Var v) const { return value(v.id); }

  // Gradient of the last backward pass for a non-parameter node, or nullptr.
  const Tensor* grad(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.param) return &n.param->grad;
    return n.has_grad ? &n.grad : nullptr;
  }

  void backward(Var loss);

  // Used by op implementations.
  Node& push(OpKind kind, std::initializer_list<int> inputs) {
    if (count_ == nodes_.size()) nodes_.emplace_back();
    Node& n = nodes_[count_];
    n.kind = kind;
    n.inputs.assign(inputs.begin(), inputs.end());
    n.param = nullptr;
    n.has_grad = false;
    n.requires_grad = false;
    if (recording()) {
      for (int in : n.inputs) {
        if (nodes_[static_cast<std::size_t>(in)].requires_grad) {
          n.requires_grad = true;
          break;
        }
      }
    }
    ++count_;
    return n;
  }

  Node& node_mut(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  Var last() { return Var{this, static_cast<int>(count_) - 1}; }

  // Gradient buffer for node `id`, zero-initialised on first touch.
  Tensor& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.param) {
      if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
      return n.param->grad;
    }
    if (!n.has_grad) {
      n.grad.resize(n.value.shape(), T(0));
      n.has_grad = true;
    }
    return n.grad;
  }

 private:
  Mode mode_;
  bool training_;
  std::mt19937_64 rng_;
  std::deque<Node> nodes_;
  std::size_t count_ = 0;
};

using Graph = BasicGraph<float>;
using Var = BasicVar<float>;

template <class T>
const BasicTensor<T>& BasicVar<T>::value() const {
  if (!graph) throw ContractError("empty Var");
  return graph->value(id);
}

}  // namespace kdb
