#pragma once

#include <cmath>
#include <vector>

#include "cplvad/graph.hpp"
#include "cplvad/params.hpp"

namespace cplvad {

// Relative-error metric shared by both entry points: for each coordinate,
// |analytic - central| / max(1, |central|), maximized over all coordinates.
// eval_fn is re-invoked on the perturbed ParamSet and must be a pure function
// of its current values.
template <typename EvalFn>
double grad_check_error(ParamSet<double>& params,
                        const std::vector<Tensor<double>>& analytic,
                        EvalFn&& eval_fn, double h) {
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
    auto& value = params.items[pi].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value.v[i];
      value.v[i] = saved + h;
      const double fp = eval_fn(params);
      value.v[i] = saved - h;
      const double fm = eval_fn(params);
      value.v[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        fail(ErrorCode::non_finite, "grad_check: non-finite evaluation");
      const double central = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[pi].v[i] - central) /
                         std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Builds the loss graph once to obtain analytic gradients, then verifies
// every coordinate against central differences. build_fn receives a fresh
// Graph plus leaf Vars bound to the current parameter values (one per
// ParamTensor, in order) and returns the scalar loss Var.
template <typename BuildFn>
double grad_check(ParamSet<double>& params, BuildFn&& build_fn, double h) {
  using G = Graph<double>;
  auto eval = [&](ParamSet<double>& ps) {
    G g;
    std::vector<typename G::Var> leaves;
    leaves.reserve(ps.items.size());
    for (auto& p : ps.items) leaves.push_back(g.leaf(p.value));
    return g.scalar(build_fn(g, leaves));
  };

  std::vector<Tensor<double>> analytic;
  {
    G g;
    std::vector<typename G::Var> leaves;
    leaves.reserve(params.items.size());
    for (auto& p : params.items) leaves.push_back(g.leaf(p.value));
    auto loss = build_fn(g, leaves);
    g.backward(loss);
    for (auto leaf : leaves) {
      const Tensor<double>& gr = g.grad(leaf);
      analytic.push_back(gr.size() ? gr
                                   : Tensor<double>(g.value(leaf).rows,
                                                    g.value(leaf).cols));
    }
  }
  return grad_check_error(params, analytic, eval, h);
}

}  // namespace cplvad
