#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cplvad/errors.hpp"

namespace cplvad {

// Dense row-major matrix. Vectors are 1xN or Nx1; scalars are 1x1.
template <typename T>
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, T fill = T(0))
      : rows(r), cols(c), v(r * c, fill) {}

  std::size_t size() const { return v.size(); }
  T& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }

  bool all_finite() const {
    for (const T& x : v) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
inline void require_shape(const Tensor<T>& t, std::size_t r, std::size_t c,
                          const std::string& what) {
  if (t.rows != r || t.cols != c) {
    fail(ErrorCode::shape_mismatch,
         what + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
             ", got " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
  }
}

}  // namespace cplvad
