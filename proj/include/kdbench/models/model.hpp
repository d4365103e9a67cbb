#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kdbench/core/ops.hpp"
#include "kdbench/models/params.hpp"
#include "kdbench/models/spec.hpp"

namespace kdb {

// Architecture spec plus its named parameters. Plain value; copying a model
// snapshots its weights.
template <class T>
struct BasicModel {
  ModelSpec spec;
  BasicParameterSet<T> params;

  ModelFamily family() const { return family_of(spec); }
  Task task() const { return task_of(spec); }
  std::size_t num_classes() const { return num_classes_of(spec); }
  std::size_t vocab_size() const { return vocab_size_of(spec); }
  std::size_t max_len() const { return max_len_of(spec); }
};

using Model = BasicModel<float>;

template <class To, class From>
BasicModel<To> model_cast(const BasicModel<From>& m) {
  return BasicModel<To>{m.spec, m.params.template cast<To>()};
}

inline std::size_t count_parameters(const Model& model) { return model.params.count(); }

namespace detail {

// Validates token ids and the padding mask (1 = real token, 0 = padding).
inline void check_forward_inputs(const ModelSpec& spec, std::span<const std::size_t> ids,
                                 std::span<const float> mask) {
  if (ids.empty()) throw ContractError("forward: empty input");
  if (ids.size() > max_len_of(spec)) {
    throw ContractError("forward: input length " + std::to_string(ids.size()) + " exceeds max_len " +
                        std::to_string(max_len_of(spec)));
  }
  const std::size_t vocab = vocab_size_of(spec);
  for (auto id : ids) {
    if (id >= vocab) throw ContractError("forward: token id " + std::to_string(id) + " out of vocabulary");
  }
  if (!mask.empty()) {
    if (mask.size() != ids.size()) throw ContractError("forward: mask length differs from input length");
    bool any = false;
    for (float m : mask) {
      if (m != 0.0f && m != 1.0f) throw ContractError("forward: mask must be binary");
      any = any || m != 0.0f;
    }
    if (!any) throw ContractError("forward: every position is padding");
  }
}

inline bool has_padding(std::span<const float> mask) {
  for (float m : mask) {
    if (m == 0.0f) return true;
  }
  return false;
}

inline const std::vector<std::size_t>& iota_positions(std::size_t n) {
  static thread_local std::vector<std::size_t> positions;
  if (positions.size() < n) {
    const std::size_t old = positions.size();
    positions.resize(n);
    for (std::size_t i = old; i < n; ++i) positions[i] = i;
  }
  return positions;
}

}  // namespace detail

}  // namespace kdb

#include "kdbench/models/bilstm.hpp"
#include "kdbench/models/cnn.hpp"
#include "kdbench/models/transformer.hpp"

namespace kdb {

inline Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  return std::visit(
      [seed](const auto& s) -> Model {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, TransformerSpec>) return build_transformer(s, seed);
        else if constexpr (std::is_same_v<S, BiLstmSpec>) return build_bilstm(s, seed);
        else return build_cnn(s, seed);
      },
      spec);
}

// Logits for one sequence: [1, num_classes] for classification, [len, num_classes]
// for sequence labeling. Dropout is active only when the graph is in training mode.
template <class T>
BasicVar<T> forward(BasicModel<T>& model, BasicGraph<T>& g, std::span<const std::size_t> ids,
                    std::span<const float> mask = {}) {
  detail::check_forward_inputs(model.spec, ids, mask);
  return std::visit(
      [&](const auto& s) -> BasicVar<T> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, TransformerSpec>) return transformer_forward(s, model.params, g, ids, mask);
        else if constexpr (std::is_same_v<S, BiLstmSpec>) return bilstm_forward(s, model.params, g, ids, mask);
        else return cnn_forward(s, model.params, g, ids, mask);
      },
      model.spec);
}

// Evaluation-mode logits as a plain tensor.
inline Tensor predict(Model& model, std::span<const std::size_t> ids, std::span<const float> mask = {}) {
  Graph g(Graph::Mode::inference);
  return forward(model, g, ids, mask).value();
}

}  // namespace kdb
