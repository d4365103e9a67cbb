#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "kdbench/core/ops.hpp"

namespace kdb {

namespace detail {

inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
}

template <class T, class F>
T eval_scalar(F& f, BasicGraph<T>& g) {
  BasicVar<T> out = f(g);
  if (out.value().size() != 1) throw ContractError("grad_check: function must return a scalar");
  return out.value()[0];
}

}  // namespace detail

// Central-difference gradient check of f at x. `f(graph, x_var)` must build a
// scalar on the graph. Returns max over coordinates of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <class T, class F>
T grad_check(F&& f, const BasicTensor<T>& x, std::type_identity_t<T> eps) {
  if (!(eps > T(0))) throw ParameterError("grad_check: eps must be positive");
  BasicGraph<T> g;
  BasicVar<T> xv = g.input(x, true);
  BasicVar<T> out = f(g, xv);
  if (out.value().size() != 1) throw ContractError("grad_check: function must return a scalar");
  g.backward(out);
  const BasicTensor<T>* gp = g.grad(xv);
  const BasicTensor<T> analytic = gp ? *gp : BasicTensor<T>(x.shape(), T(0));

  double worst = 0.0;
  BasicTensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    BasicGraph<T> gp_plus;
    probe[i] = orig + eps;
    auto fp = [&](BasicGraph<T>& gg) { return f(gg, gg.input(probe, false)); };
    const double up = detail::eval_scalar(fp, gp_plus);
    BasicGraph<T> gp_minus;
    probe[i] = orig - eps;
    const double down = detail::eval_scalar(fp, gp_minus);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
    worst = std::max(worst, detail::relative_error(static_cast<double>(analytic[i]), numeric));
  }
  return static_cast<T>(worst);
}

// Same check against every parameter in `params`, for losses built by
// `loss(graph)` that read the parameters through graph.param(). At most
// `max_coords` randomly chosen coordinates per parameter are probed (0 = all).
template <class T, class F>
T grad_check_parameters(F&& loss, std::span<BasicParameter<T>> params, std::type_identity_t<T> eps,
                        std::size_t max_coords = 0, std::uint64_t seed = 0) {
  for (auto& p : params) p.zero_grad();
  {
    BasicGraph<T> g;
    BasicVar<T> out = loss(g);
    if (out.value().size() != 1) throw ContractError("grad_check: function must return a scalar");
    g.backward(out);
  }
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<std::size_t> coords(p.value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const T orig = p.value[i];
      p.value[i] = orig + eps;
      BasicGraph<T> g_up(BasicGraph<T>::Mode::inference);
      const double up = detail::eval_scalar(loss, g_up);
      p.value[i] = orig - eps;
      BasicGraph<T> g_down(BasicGraph<T>::Mode::inference);
      const double down = detail::eval_scalar(loss, g_down);
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      worst = std::max(worst, detail::relative_error(static_cast<double>(p.grad[i]), numeric));
    }
  }
  return static_cast<T>(worst);
}

}  // namespace kdb
