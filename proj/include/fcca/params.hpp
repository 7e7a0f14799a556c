#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <stdexcept>
#include <vector>

#include "fcca/tensor.hpp"

namespace fcca {

// A parameter object exposes its storage as an ordered list of spans. Gradient
// objects share the parameter type, so congruence is a matter of matching views.
template <class P>
concept ParameterSet = std::copy_constructible<P> && requires(P p, const P cp) {
  { p.views() } -> std::same_as<std::vector<std::span<double>>>;
  { cp.views() } -> std::same_as<std::vector<std::span<const double>>>;
};

template <ParameterSet P>
bool congruent(const P& a, const P& b) {
  auto va = a.views();
  auto vb = b.views();
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].size() != vb[i].size()) return false;
  }
  return true;
}

template <ParameterSet P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  for (auto v : p.views()) n += v.size();
  return n;
}

template <ParameterSet P>
std::vector<double> flatten(const P& p) {
  std::vector<double> out;
  out.reserve(parameter_count(p));
  for (auto v : p.views()) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// Same structure as `like`, every entry zero.
template <ParameterSet P>
P zeros_like(const P& like) {
  P out = like;
  for (auto v : out.views()) std::fill(v.begin(), v.end(), 0.0);
  return out;
}

// theta <- theta - lr * g
template <ParameterSet P>
void sgd_step(P& params, const P& grads, double learning_rate) {
  if (!congruent(params, grads)) throw ShapeError("gradients are not congruent with parameters");
  auto pv = params.views();
  auto gv = grads.views();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    for (std::size_t j = 0; j < pv[i].size(); ++j) pv[i][j] -= learning_rate * gv[i][j];
  }
}

// Rescales grads so their global L2 norm is at most max_norm; returns the norm before clipping.
template <ParameterSet P>
double clip_gradient_norm(P& grads, double max_norm) {
  double sq = 0.0;
  for (auto v : grads.views()) {
    for (double g : v) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto v : grads.views()) {
      for (double& g : v) g *= scale;
    }
  }
  return norm;
}

template <ParameterSet P>
void accumulate(P& into, const P& add, double scale = 1.0) {
  if (!congruent(into, add)) throw ShapeError("cannot accumulate non-congruent parameter sets");
  auto iv = into.views();
  auto av = add.views();
  for (std::size_t i = 0; i < iv.size(); ++i) {
    for (std::size_t j = 0; j < iv[i].size(); ++j) iv[i][j] += scale * av[i][j];
  }
}

// Elementwise sum_k w_k * params_k. Weights must sum to one within `tolerance`.
template <ParameterSet P>
P weighted_average(std::span<const P* const> params, std::span<const double> weights,
                   double tolerance = 1e-9) {
  if (params.empty()) throw std::invalid_argument("weighted_average of an empty set");
  if (params.size() != weights.size()) throw std::invalid_argument("one weight per parameter set required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("aggregation weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > tolerance) {
    throw std::invalid_argument("aggregation weights sum to " + std::to_string(total) + ", expected 1");
  }
  P out = zeros_like(*params.front());
  for (std::size_t k = 0; k < params.size(); ++k) accumulate(out, *params[k], weights[k]);
  return out;
}

}  // namespace fcca
