#pragma once

#include <cstddef>
#include <vector>

#include "cplvad/errors.hpp"
#include "cplvad/graph.hpp"
#include "cplvad/tensor.hpp"

namespace cplvad {

inline void validate_sequence_length(std::size_t n, std::size_t levels) {
  if (levels < 1) fail(ErrorCode::validation, "pyramid: need at least 1 level");
  const std::size_t factor = std::size_t{1} << (levels - 1);
  if (n == 0 || n % factor != 0)
    fail(ErrorCode::validation,
         "pyramid: n=" + std::to_string(n) + " is not a positive multiple of " +
             std::to_string(factor));
}

// Linear interpolation along rows to exactly n rows, endpoints pinned;
// constant inputs map to constant outputs. levels > 1 additionally checks
// that n supports that many halvings.
template <typename T>
inline Tensor<T> resample_to_n(const Tensor<T>& m, std::size_t n,
                               std::size_t levels = 1) {
  validate_sequence_length(n, levels);
  if (m.rows < 1) fail(ErrorCode::validation, "resample: empty input");
  Tensor<T> out(n, m.cols);
  for (std::size_t i = 0; i < n; ++i) {
    double pos = 0.0;
    if (n > 1 && m.rows > 1)
      pos = static_cast<double>(i) * static_cast<double>(m.rows - 1) /
            static_cast<double>(n - 1);
    const auto i0 = static_cast<std::size_t>(pos);
    const std::size_t i1 = std::min(i0 + 1, m.rows - 1);
    const double w1 = pos - static_cast<double>(i0);
    for (std::size_t j = 0; j < m.cols; ++j)
      out.at(i, j) = static_cast<T>((1.0 - w1) * m.at(i0, j) +
                                    w1 * m.at(i1, j));
  }
  return out;
}

// Graph-side handles for the encoder parameters: an input projection plus a
// residual temporal block per level (depthwise width-3 conv + pointwise map).
template <typename T>
struct EncoderVars {
  using Var = typename Graph<T>::Var;
  Var proj_w, proj_b;
  struct Level {
    Var dw, pw_w, pw_b;
  };
  std::vector<Level> levels;
};

template <typename T>
inline typename Graph<T>::Var residual_block(
    Graph<T>& g, typename Graph<T>::Var x,
    const typename EncoderVars<T>::Level& lv, PadMode pad) {
  auto mixed = g.dwconv3(x, lv.dw, pad);
  auto mapped = g.add_rowvec(g.matmul(mixed, lv.pw_w), lv.pw_b);
  return g.add(x, mapped);
}

// Multi-scale encoding: level 1 is the projected+mixed sequence at length n;
// each further level halves time with stride-2 average pooling before its
// own residual block. Output widths are all d.
template <typename T>
inline std::vector<typename Graph<T>::Var> encode_pyramid(
    Graph<T>& g, const EncoderVars<T>& enc, typename Graph<T>::Var features,
    PadMode pad = PadMode::replicate) {
  const std::size_t n = g.value(features).rows;
  validate_sequence_length(n, enc.levels.size());
  std::vector<typename Graph<T>::Var> out;
  auto h = g.add_rowvec(g.matmul(features, enc.proj_w), enc.proj_b);
  h = residual_block(g, h, enc.levels[0], pad);
  out.push_back(h);
  for (std::size_t i = 1; i < enc.levels.size(); ++i) {
    h = residual_block(g, g.avgpool2(h), enc.levels[i], pad);
    out.push_back(h);
  }
  return out;
}

}  // namespace cplvad
