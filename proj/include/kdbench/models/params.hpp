#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kdbench/core/graph.hpp"

namespace kdb {

// Ordered, uniquely named parameter list. Architectures create parameters in a
// fixed order and their forward passes read them back in that same order.
template <class T>
class BasicParameterSet {
 public:
  BasicParameter<T>& add(std::string name, BasicTensor<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value), {}});
    return params_.back();
  }

  std::size_t size() const noexcept { return params_.size(); }
  BasicParameter<T>& operator[](std::size_t i) { return params_[i]; }
  const BasicParameter<T>& operator[](std::size_t i) const { return params_[i]; }

  BasicParameter<T>* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const BasicParameter<T>* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  BasicParameter<T>& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw ContractError("no parameter named '" + std::string(name) + "'");
  }
  const BasicParameter<T>& at(std::string_view name) const {
    if (auto* p = find(name)) return *p;
    throw ContractError("no parameter named '" + std::string(name) + "'");
  }

  std::span<BasicParameter<T>> all() noexcept { return params_; }
  std::span<const BasicParameter<T>> all() const noexcept { return params_; }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  std::size_t count() const noexcept {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.size();
    return total;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  template <class To>
  BasicParameterSet<To> cast() const {
    BasicParameterSet<To> out;
    for (const auto& p : params_) out.add(p.name, tensor_cast<To>(p.value));
    return out;
  }

 private:
  std::vector<BasicParameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParameterSet = BasicParameterSet<float>;

// Sequential reader over a parameter set, registering each parameter on the
// graph as it is consumed. `next` checks the name suffix so a forward pass that
// drifts from the build order fails loudly.
template <class T>
class ParamCursor {
 public:
  ParamCursor(BasicParameterSet<T>& params, BasicGraph<T>& graph) : params_(params), graph_(graph) {}

  BasicVar<T> next(std::string_view suffix) {
    if (pos_ >= params_.size()) throw ContractError("parameter cursor overrun at '" + std::string(suffix) + "'");
    BasicParameter<T>& p = params_[pos_++];
    if (p.name.size() < suffix.size() ||
        std::string_view(p.name).substr(p.name.size() - suffix.size()) != suffix) {
      throw ContractError("parameter order mismatch: expected *" + std::string(suffix) + ", found " + p.name);
    }
    return graph_.param(p);
  }

  std::size_t position() const noexcept { return pos_; }

 private:
  BasicParameterSet<T>& params_;
  BasicGraph<T>& graph_;
  std::size_t pos_ = 0;
};

// Deterministic parameter initialisers.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(const Shape& shape, float stddev) {
    std::normal_distribution<float> d(0.0f, stddev);
    Tensor t(shape);
    for (auto& v : t.data()) v = d(rng_);
    return t;
  }
  Tensor uniform(const Shape& shape, float bound) {
    std::uniform_real_distribution<float> d(-bound, bound);
    Tensor t(shape);
    for (auto& v : t.data()) v = d(rng_);
    return t;
  }
  // Glorot uniform for a [fan_in, fan_out] matrix.
  Tensor xavier(std::size_t fan_in, std::size_t fan_out) {
    return uniform({fan_in, fan_out}, std::sqrt(6.0f / static_cast<float>(fan_in + fan_out)));
  }
  static Tensor zeros(const Shape& shape) { return Tensor(shape, 0.0f); }
  static Tensor ones(const Shape& shape) { return Tensor(shape, 1.0f); }

  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace kdb
