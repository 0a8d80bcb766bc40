#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "cplvad/errors.hpp"
#include "cplvad/graph.hpp"

namespace cplvad {

struct LossConfig {
  std::size_t topk_divisor = 16;  // K_i = max(1, t_i / divisor)
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double p_min = 1e-7;  // probability clamp on every log argument

  void validate() const {
    if (topk_divisor < 1)
      fail(ErrorCode::validation, "loss: topk divisor must be >= 1");
    if (focal_gamma < 0.0)
      fail(ErrorCode::validation, "loss: focal gamma must be >= 0");
    if (focal_alpha <= 0.0 || focal_alpha >= 1.0)
      fail(ErrorCode::validation, "loss: focal alpha outside (0,1)");
    if (p_min <= 0.0 || p_min >= 0.5)
      fail(ErrorCode::validation, "loss: p_min outside (0, 0.5)");
  }
};

inline std::size_t topk_for_length(std::size_t t, const LossConfig& cfg) {
  return std::max<std::size_t>(1, t / cfg.topk_divisor);
}

// Mean of the K largest entries, ties broken by lower index.
inline double topk_mean(const std::vector<double>& scores, std::size_t k) {
  const auto idx = topk_indices(scores, k);
  double s = 0.0;
  for (std::size_t i : idx) s += scores[i];
  return s / static_cast<double>(k);
}

// Video-level binary cross-entropy over top-K sigmoid scores, averaged over
// pyramid levels. levels holds raw [t_i x 1] logits.
template <typename T>
inline typename Graph<T>::Var bce_video_loss(
    Graph<T>& g, const std::vector<typename Graph<T>::Var>& levels,
    bool video_abnormal, const LossConfig& cfg) {
  using Var = typename Graph<T>::Var;
  Var acc{};
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::size_t t = g.value(levels[i]).rows;
    auto v = g.topk_mean(g.sigmoid(levels[i]), topk_for_length(t, cfg));
    v = g.clamp(v, static_cast<T>(cfg.p_min), static_cast<T>(1.0 - cfg.p_min));
    Var term = video_abnormal
                   ? g.neg(g.log(v))
                   : g.neg(g.log(g.add_const(g.neg(v), T(1))));
    acc = (i == 0) ? term : g.add(acc, term);
  }
  return g.scale(acc, T(1) / static_cast<T>(levels.size()));
}

// Multiple-instance alignment loss: per level, the video-level logit of each
// category is the top-K mean of its column; cross-entropy of the softmax
// over categories against the video's label set (mean over the positive
// categories), averaged over levels. levels holds raw [t_i x M] logits.
template <typename T>
inline typename Graph<T>::Var mil_align_loss(
    Graph<T>& g, const std::vector<typename Graph<T>::Var>& levels,
    const std::vector<int>& label_set, const LossConfig& cfg) {
  using Var = typename Graph<T>::Var;
  if (label_set.empty())
    fail(ErrorCode::validation, "mil_align_loss: empty label set");
  std::vector<std::size_t> positives;
  for (int l : label_set) positives.push_back(static_cast<std::size_t>(l));
  Var acc{};
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::size_t t = g.value(levels[i]).rows;
    auto video_logits =
        g.col_topk_mean(levels[i], topk_for_length(t, cfg));  // 1 x M
    auto picked = g.pick(g.log_softmax_row(video_logits), positives);
    Var term = g.neg(g.mean(picked));
    acc = (i == 0) ? term : g.add(acc, term);
  }
  return g.scale(acc, T(1) / static_cast<T>(levels.size()));
}

// Soft-target focal loss between a probability vector and a fixed [0,1]
// target track of the same length.
template <typename T>
inline typename Graph<T>::Var focal_soft_loss(Graph<T>& g,
                                              typename Graph<T>::Var pred,
                                              const std::vector<T>& target,
                                              const LossConfig& cfg) {
  const auto& P = g.value(pred);
  if (P.size() != target.size())
    fail(ErrorCode::shape_mismatch, "focal: pred/target length mismatch");
  Tensor<T> pos_w(P.rows, P.cols), neg_w(P.rows, P.cols);
  for (std::size_t i = 0; i < target.size(); ++i) {
    pos_w.v[i] = static_cast<T>(target[i] * cfg.focal_alpha);
    neg_w.v[i] = static_cast<T>((1.0 - target[i]) * (1.0 - cfg.focal_alpha));
  }
  auto p = g.clamp(pred, static_cast<T>(cfg.p_min),
                   static_cast<T>(1.0 - cfg.p_min));
  auto one_minus_p = g.add_const(g.neg(p), T(1));
  const T gamma = static_cast<T>(cfg.focal_gamma);
  auto pos_term = g.hadamard(g.leaf(pos_w),
                             g.hadamard(g.pow_const(one_minus_p, gamma),
                                        g.log(p)));
  auto neg_term = g.hadamard(g.leaf(neg_w),
                             g.hadamard(g.pow_const(p, gamma),
                                        g.log(one_minus_p)));
  return g.neg(g.mean(g.add(pos_term, neg_term)));
}

// Unweighted total per the combined objective; stage 1 passes no focal term.
inline double total_loss(double bce, double nce, const double* focal = nullptr) {
  if (!std::isfinite(bce) || !std::isfinite(nce) ||
      (focal && !std::isfinite(*focal)))
    fail(ErrorCode::non_finite, "total_loss: non-finite term");
  return bce + nce + (focal ? *focal : 0.0);
}

}  // namespace cplvad
