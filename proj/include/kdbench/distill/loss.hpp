#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kdbench/core/ops.hpp"

namespace kdb {

enum class LossMode { mse, kld, hard };

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::mse: return "mse";
    case LossMode::kld: return "kld";
    case LossMode::hard: return "hard";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "mse") return LossMode::mse;
  if (s == "kld") return LossMode::kld;
  if (s == "hard") return LossMode::hard;
  throw ParameterError("unknown loss mode '" + s + "' (expected mse, kld or hard)");
}

// Teacher output for one sequence: one row per prediction (a single row for
// classification, one per token for sequence labeling).
struct SoftTarget {
  Tensor logits;
  Tensor probs;
  std::vector<std::size_t> hard;

  std::size_t rows() const { return probs.rows(); }
  std::size_t classes() const { return probs.cols(); }

  static SoftTarget from_logits(Tensor logits) {
    if (logits.rank() == 1) logits = logits.reshaped({1, logits.size()});
    SoftTarget t;
    t.probs = softmax(logits);
    t.hard.resize(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) t.hard[r] = argmax(logits.row(r));
    t.logits = std::move(logits);
    return t;
  }

  // Target given directly as a distribution; logits are the log-probabilities.
  static SoftTarget from_probs(Tensor probs) {
    if (probs.rank() == 1) probs = probs.reshaped({1, probs.size()});
    SoftTarget t;
    t.logits = Tensor(probs.shape());
    t.hard.resize(probs.rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      float sum = 0.0f;
      for (float p : probs.row(r)) {
        if (!(p >= 0.0f)) throw ParameterError("probabilities must be non-negative");
        sum += p;
      }
      if (std::fabs(sum - 1.0f) > 1e-5f) throw ParameterError("probabilities must sum to 1");
      t.hard[r] = argmax(probs.row(r));
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        const float p = probs.at(r, c);
        t.logits.at(r, c) = p > 0.0f ? std::log(p) : -1e30f;
      }
    }
    t.probs = std::move(probs);
    return t;
  }

  // One-hot target for gold labels.
  static SoftTarget from_labels(std::span<const std::size_t> labels, std::size_t classes) {
    SoftTarget t;
    t.probs = Tensor({labels.size(), classes}, 0.0f);
    t.logits = Tensor({labels.size(), classes}, 0.0f);
    t.hard.assign(labels.begin(), labels.end());
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (labels[r] >= classes) throw ContractError("label id out of range");
      t.probs.at(r, labels[r]) = 1.0f;
      t.logits.at(r, labels[r]) = 1.0f;
    }
    return t;
  }
};

namespace detail {

// Per-row weights 1/n_active over unmasked rows.
inline std::vector<float> row_weights(std::size_t rows, std::span<const float> mask) {
  if (!mask.empty() && mask.size() != rows) throw DimensionError("loss mask length differs from row count");
  std::vector<float> w(rows, 1.0f);
  std::size_t active = rows;
  if (!mask.empty()) {
    active = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      w[r] = mask[r] != 0.0f ? 1.0f : 0.0f;
      active += mask[r] != 0.0f;
    }
  }
  if (active == 0) throw ContractError("loss over zero non-pad positions");
  for (auto& v : w) v /= static_cast<float>(active);
  return w;
}

}  // namespace detail

// Mean negative log-likelihood of `labels` under softmax(logits) over unmasked rows.
template <class T>
BasicVar<T> nll_loss(BasicVar<T> logits, std::span<const std::size_t> labels, std::span<const float> mask = {}) {
  BasicGraph<T>& g = *logits.graph;
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (labels.size() != rows) throw DimensionError("nll_loss: label count differs from logit rows");
  const auto w = detail::row_weights(rows, mask);
  BasicTensor<T> pick({rows, cols}, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) throw ContractError("nll_loss: label id out of range");
    pick.at(r, labels[r]) = -static_cast<T>(w[r]);
  }
  return ops::sum(ops::mul(ops::log_softmax(logits), g.constant(pick)));
}

// Distillation loss between student logits and a teacher target.
//   mse:  mean over unmasked elements of (student - teacher logits)^2; T unused.
//   kld:  mean over unmasked rows of KL(p_T || p_S), both at temperature T.
//   hard: cross-entropy against the teacher's argmax labels.
template <class T>
BasicVar<T> distill_loss(BasicVar<T> student, const SoftTarget& target, LossMode mode, float temperature = 1.0f,
                         std::span<const float> mask = {}) {
  BasicGraph<T>& g = *student.graph;
  if (student.value().shape() != target.probs.shape()) {
    throw DimensionError("distill_loss: student " + shape_str(student.shape()) + " vs teacher " +
                         shape_str(target.probs.shape()));
  }
  if (!(temperature > 0.0f) || !std::isfinite(temperature)) throw ParameterError("temperature must be positive");
  const std::size_t rows = target.rows(), cols = target.classes();
  const auto w = detail::row_weights(rows, mask);
  switch (mode) {
    case LossMode::mse: {
      BasicTensor<T> scale({rows, cols});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) scale.at(r, c) = static_cast<T>(w[r]) / static_cast<T>(cols);
      }
      BasicVar<T> diff = ops::sub(student, g.constant(tensor_cast<T>(target.logits)));
      return ops::sum(ops::mul(ops::mul(diff, diff), g.constant(scale)));
    }
    case LossMode::kld: {
      const Tensor p = temperature == 1.0f ? target.probs : softmax_with_temperature(target.logits, temperature);
      BasicVar<T> log_q =
          ops::log_softmax(temperature == 1.0f ? student : ops::scalar_mul(student, T(1) / static_cast<T>(temperature)));
      BasicTensor<T> weight({rows, cols});
      double entropy_term = 0.0;  // sum p log p, with 0 log 0 = 0
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const float pv = p.at(r, c);
          weight.at(r, c) = -static_cast<T>(w[r]) * static_cast<T>(pv);
          if (pv > 0.0f) entropy_term += static_cast<double>(w[r]) * pv * std::log(static_cast<double>(pv));
        }
      }
      return ops::add_scalar(ops::sum(ops::mul(log_q, g.constant(weight))), static_cast<T>(entropy_term));
    }
    case LossMode::hard:
      return nll_loss(student, target.hard, mask);
  }
  throw ParameterError("unknown loss mode");
}

}  // namespace kdb
