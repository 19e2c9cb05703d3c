#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "emb/tensor/tensor.hpp"

namespace emb {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One Adam update with bias correction at rate config.lr * lr_scale.
/// Parameters without a gradient buffer are treated as having zero gradient.
template <class Real>
void adam_step(std::vector<Tensor<Real>>& params, AdamState<Real>& state, double lr_scale = 1.0) {
  if (!(lr_scale > 0.0 && lr_scale <= 1.0))
    fail(Error::Kind::validation, "adam_step: lr_scale must lie in (0, 1]");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    fail(Error::Kind::shape, "adam_step: optimizer state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size())
      fail(Error::Kind::shape, "adam_step: moment buffer shape mismatch for parameter " + std::to_string(i));
    if (params[i].has_grad() && !all_finite<Real>(params[i].grad()))
      fail(Error::Kind::numeric, "adam_step: non-finite gradient in parameter " + std::to_string(i));
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.step));
  const double lr = c.lr * lr_scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto value = params[i].mutable_data();
    auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      value[j] = Real(double(value[j]) - lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm measured before clipping.
template <class Real>
double clip_global_norm(std::vector<Tensor<Real>>& params, double max_norm) {
  if (!(max_norm > 0.0)) fail(Error::Kind::validation, "clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (Real g : p.grad()) {
      if (!std::isfinite(g)) fail(Error::Kind::numeric, "clip_global_norm: non-finite gradient");
      sq += double(g) * double(g);
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (Real& g : p.mutable_grad()) g = Real(double(g) * factor);
    }
  }
  return norm;
}

/// Linear decay from 1 at step 0 towards 0 at total_steps; never reaches 0.
inline double linear_lr_scale(std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0) return 1.0;
  const double s = 1.0 - double(step) / double(total_steps);
  return std::max(s, 1.0 / double(total_steps));
}

}  // namespace emb
