#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kdbench/core/graph.hpp"

namespace kdb {

enum class OptimizerKind { adam, sgd };

// Adam with bias correction, or plain SGD. Moment buffers are created on the
// first step and must keep matching the parameter shapes afterwards.
class Optimizer {
 public:
  static Optimizer adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f) {
    return Optimizer(OptimizerKind::adam, lr, beta1, beta2, eps);
  }
  static Optimizer sgd(float lr) { return Optimizer(OptimizerKind::sgd, lr, 0.0f, 0.0f, 0.0f); }

  OptimizerKind kind() const noexcept { return kind_; }
  float lr() const noexcept { return lr_; }
  void set_lr(float lr) {
    if (!(lr > 0.0f)) throw ParameterError("learning rate must be positive");
    lr_ = lr;
  }
  std::int64_t steps() const noexcept { return t_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  // Applies one update using each parameter's accumulated grad. A parameter
  // whose grad was never allocated is treated as having a zero gradient.
  void step(std::span<Parameter> params) {
    for (const Parameter& p : params) {
      if (!p.grad.empty() && p.grad.shape() != p.value.shape()) {
        throw ContractError("optimizer: gradient shape " + shape_str(p.grad.shape()) +
                            " does not match parameter '" + p.name + "' " +
                            shape_str(p.value.shape()));
      }
    }
    if (kind_ == OptimizerKind::adam) {
      if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Parameter& p : params) {
          m_.emplace_back(p.value.shape(), 0.0f);
          v_.emplace_back(p.value.shape(), 0.0f);
        }
      } else if (m_.size() != params.size()) {
        throw ContractError("optimizer: parameter count changed between steps");
      }
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (m_[k].shape() != params[k].value.shape()) {
          throw ContractError("optimizer: moment buffer shape mismatch for '" + params[k].name + "'");
        }
      }
    }
    ++t_;
    const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = params[k];
      const bool has_grad = !p.grad.empty();
      auto w = p.value.data();
      if (kind_ == OptimizerKind::sgd) {
        if (!has_grad) continue;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * p.grad[i];
        continue;
      }
      auto m = m_[k].data();
      auto v = v_[k].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const float g = has_grad ? p.grad[i] : 0.0f;
        m[i] = beta1_ * m[i] + (1.0f - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0f - beta2_) * g * g;
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  Optimizer(OptimizerKind kind, float lr, float beta1, float beta2, float eps)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0f)) throw ParameterError("learning rate must be positive");
  }

  OptimizerKind kind_;
  float lr_;
  float beta1_;
  float beta2_;
  float eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace kdb
