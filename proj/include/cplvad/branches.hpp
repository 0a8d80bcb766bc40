#pragma once

#include <cstddef>
#include <vector>

#include "cplvad/graph.hpp"

namespace cplvad {

// Graph-side handles for the two branch heads. The B-branch owns one 2-layer
// MLP (d -> d/2 -> 1, ReLU) per level; the C-branch owns the prompt bank:
// per-category embeddings, the shared normal/abnormal state vectors, one
// level vector per scale, and a learnable temperature.
template <typename T>
struct BBranchVars {
  using Var = typename Graph<T>::Var;
  struct Head {
    Var w1, b1, w2, b2;
  };
  std::vector<Head> heads;  // one per level
};

template <typename T>
struct PromptVars {
  using Var = typename Graph<T>::Var;
  Var e_cat;  // M x d
  Var n_p;    // 1 x d, shared by the normal category everywhere
  Var a_p;    // 1 x d, shared by all abnormal categories everywhere
  Var q_p;    // L x d, one row per level, shared across categories
  Var tau;    // 1 x 1
};

// Per-snippet anomaly logits, one [t_i x 1] matrix per level.
template <typename T>
inline std::vector<typename Graph<T>::Var> b_branch_scores(
    Graph<T>& g, const std::vector<typename Graph<T>::Var>& pyramid,
    const BBranchVars<T>& b) {
  std::vector<typename Graph<T>::Var> out;
  for (std::size_t i = 0; i < pyramid.size(); ++i) {
    const auto& head = b.heads[i];
    auto hidden = g.relu(g.add_rowvec(g.matmul(pyramid[i], head.w1), head.b1));
    out.push_back(g.add_rowvec(g.matmul(hidden, head.w2), head.b2));
  }
  return out;
}

// Additive composition before normalization; the cancellation identities of
// the shared tokens are tested on this surface.
template <typename T>
inline typename Graph<T>::Var composed_prompts_raw(Graph<T>& g,
                                                   const PromptVars<T>& p,
                                                   std::size_t level) {
  return g.compose_prompt(p.e_cat, p.n_p, p.a_p, g.row(p.q_p, level));
}

// F_T for one level: unit-normalized composed prompt embeddings [M x d].
// A zero-norm composed vector is a hard error.
template <typename T>
inline typename Graph<T>::Var compose_prompt_embeddings(
    Graph<T>& g, const PromptVars<T>& p, std::size_t level) {
  return g.row_l2_normalize(composed_prompts_raw(g, p, level),
                            ZeroNormPolicy::fail);
}

// Category logits: cosine similarity between video features and prompt
// embeddings, scaled by 1/tau. Zero-norm video rows score zero everywhere
// and are counted into *zero_rows when provided.
template <typename T>
inline std::vector<typename Graph<T>::Var> c_branch_scores(
    Graph<T>& g, const std::vector<typename Graph<T>::Var>& pyramid,
    const PromptVars<T>& p, int* zero_rows = nullptr) {
  std::vector<typename Graph<T>::Var> out;
  for (std::size_t i = 0; i < pyramid.size(); ++i) {
    auto f_t = compose_prompt_embeddings(g, p, i);
    auto f_v = g.row_l2_normalize(pyramid[i], ZeroNormPolicy::zero, zero_rows);
    out.push_back(g.div_by_scalar(g.matmul_bt(f_v, f_t), p.tau));
  }
  return out;
}

}  // namespace cplvad
