#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hvae/tensor.hpp"

namespace hvae::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

/// Bias-corrected Adam update applied in place, one tensor after another.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for tensor " + std::to_string(i));
    }
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - cfg.lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps));
    }
  }
}

}  // namespace hvae::nn
