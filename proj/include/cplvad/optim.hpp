#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cplvad/errors.hpp"
#include "cplvad/params.hpp"

namespace cplvad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;

  static AdamState init(const ParamSet<float>& params) {
    AdamState st;
    for (const auto& p : params.items) {
      st.m.emplace_back(p.value.rows, p.value.cols);
      st.v.emplace_back(p.value.rows, p.value.cols);
    }
    return st;
  }
};

// Bias-corrected Adam update over every parameter; gradients are cleared
// afterwards.
inline void adam_step(ParamSet<float>& params, AdamState& state,
                      const AdamConfig& cfg) {
  for (const auto& p : params.items) {
    if (!p.grad.all_finite())
      fail(ErrorCode::non_finite, "adam_step: non-finite gradient in " + p.name);
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
    auto& p = params.items[pi];
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.v[i];
      const double mi =
          cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g;
      const double vi =
          cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g * g;
      m.v[i] = static_cast<float>(mi);
      v.v[i] = static_cast<float>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p.value.v[i] -=
          static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
  params.zero_grads();
}

}  // namespace cplvad
