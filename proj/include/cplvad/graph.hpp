#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cplvad/errors.hpp"
#include "cplvad/tensor.hpp"

namespace cplvad {

enum class PadMode { replicate, circular };

// What a row-normalize does when it meets an all-zero row.
enum class ZeroNormPolicy { fail, zero };

// Picks the indices of the k largest entries, ties broken by lower index.
template <typename T>
inline std::vector<std::size_t> topk_indices(const std::vector<T>& x,
                                             std::size_t k) {
  if (k < 1 || k > x.size()) {
    fail(ErrorCode::validation, "top-k: k=" + std::to_string(k) +
                                    " out of range for length " +
                                    std::to_string(x.size()));
  }
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] > x[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so walking the tape backwards is a topological order. Every op
// checks its output for non-finite entries and reports the op name.
template <typename T>
class Graph {
 public:
  struct Var {
    int i = -1;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Tensor<T>& value(Var v) const { return nodes_[v.i].value; }
  T scalar(Var v) const { return nodes_[v.i].value.v[0]; }
  const Tensor<T>& grad(Var v) const { return nodes_[v.i].grad; }

  Var leaf(Tensor<T> value) { return push(std::move(value), "leaf", {}); }

  Var matmul(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    if (A.cols != B.rows) fail(ErrorCode::shape_mismatch, "matmul: inner dims");
    Tensor<T> out(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i)
      for (std::size_t k = 0; k < A.cols; ++k) {
        const T aik = A.at(i, k);
        for (std::size_t j = 0; j < B.cols; ++j)
          out.at(i, j) += aik * B.at(k, j);
      }
    return push(std::move(out), "matmul", {a, b}, [a, b](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      const Tensor<T>&A = g.val(a), &B = g.val(b);
      Tensor<T>&dA = g.grad_buf(a), &dB = g.grad_buf(b);
      for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < B.cols; ++j) {
          const T gij = G.at(i, j);
          for (std::size_t k = 0; k < A.cols; ++k) {
            dA.at(i, k) += gij * B.at(k, j);
            dB.at(k, j) += gij * A.at(i, k);
          }
        }
    });
  }

  // A [t x d] times B^T [d x M] -> [t x M]; saves an explicit transpose.
  Var matmul_bt(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    if (A.cols != B.cols) fail(ErrorCode::shape_mismatch, "matmul_bt: widths");
    Tensor<T> out(A.rows, B.rows);
    for (std::size_t i = 0; i < A.rows; ++i)
      for (std::size_t m = 0; m < B.rows; ++m) {
        T s = 0;
        for (std::size_t k = 0; k < A.cols; ++k) s += A.at(i, k) * B.at(m, k);
        out.at(i, m) = s;
      }
    return push(std::move(out), "matmul_bt", {a, b},
                [a, b](Graph& g, int self) {
                  const Tensor<T>& G = g.nodes_[self].grad;
                  const Tensor<T>&A = g.val(a), &B = g.val(b);
                  Tensor<T>&dA = g.grad_buf(a), &dB = g.grad_buf(b);
                  for (std::size_t i = 0; i < A.rows; ++i)
                    for (std::size_t m = 0; m < B.rows; ++m) {
                      const T gim = G.at(i, m);
                      for (std::size_t k = 0; k < A.cols; ++k) {
                        dA.at(i, k) += gim * B.at(m, k);
                        dB.at(m, k) += gim * A.at(i, k);
                      }
                    }
                });
  }

  Var add(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    if (!A.same_shape(B)) fail(ErrorCode::shape_mismatch, "add: shapes");
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
    return push(std::move(out), "add", {a, b}, [a, b](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      Tensor<T>&dA = g.grad_buf(a), &dB = g.grad_buf(b);
      for (std::size_t i = 0; i < G.size(); ++i) {
        dA.v[i] += G.v[i];
        dB.v[i] += G.v[i];
      }
    });
  }

  Var sub(Var a, Var b) { return add(a, scale(b, T(-1))); }

  Var add_rowvec(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    if (B.rows != 1 || B.cols != A.cols)
      fail(ErrorCode::shape_mismatch, "add_rowvec: shapes");
    Tensor<T> out = A;
    for (std::size_t i = 0; i < A.rows; ++i)
      for (std::size_t j = 0; j < A.cols; ++j) out.at(i, j) += B.v[j];
    return push(std::move(out), "add_rowvec", {a, b},
                [a, b](Graph& g, int self) {
                  const Tensor<T>& G = g.nodes_[self].grad;
                  Tensor<T>&dA = g.grad_buf(a), &dB = g.grad_buf(b);
                  for (std::size_t i = 0; i < G.rows; ++i)
                    for (std::size_t j = 0; j < G.cols; ++j) {
                      dA.at(i, j) += G.at(i, j);
                      dB.v[j] += G.at(i, j);
                    }
                });
  }

  Var hadamard(Var a, Var b) {
    const Tensor<T>&A = val(a), &B = val(b);
    if (!A.same_shape(B)) fail(ErrorCode::shape_mismatch, "hadamard: shapes");
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= B.v[i];
    return push(std::move(out), "hadamard", {a, b}, [a, b](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      const Tensor<T>&A = g.val(a), &B = g.val(b);
      Tensor<T>&dA = g.grad_buf(a), &dB = g.grad_buf(b);
      for (std::size_t i = 0; i < G.size(); ++i) {
        dA.v[i] += G.v[i] * B.v[i];
        dB.v[i] += G.v[i] * A.v[i];
      }
    });
  }

  Var scale(Var a, T c) {
    Tensor<T> out = val(a);
    for (T& x : out.v) x *= c;
    return push(std::move(out), "scale", {a}, [a, c](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA.v[i] += c * G.v[i];
    });
  }

  Var add_const(Var a, T c) {
    Tensor<T> out = val(a);
    for (T& x : out.v) x += c;
    return push(std::move(out), "add_const", {a}, [a](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA.v[i] += G.v[i];
    });
  }

  Var neg(Var a) { return scale(a, T(-1)); }

  Var relu(Var a) {
    Tensor<T> out = val(a);
    for (T& x : out.v) x = x > T(0) ? x : T(0);
    return push(std::move(out), "relu", {a}, [a](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      const Tensor<T>& A = g.val(a);
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i)
        if (A.v[i] > T(0)) dA.v[i] += G.v[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor<T> out = val(a);
    for (T& x : out.v) x = stable_sigmoid(x);
    return push(std::move(out), "sigmoid", {a}, [a](Graph& g, int self) {
      const Tensor<T>&G = g.nodes_[self].grad, &Y = g.nodes_[self].value;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i)
        dA.v[i] += G.v[i] * Y.v[i] * (T(1) - Y.v[i]);
    });
  }

  Var row_softmax(Var a) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.rows, A.cols);
    for (std::size_t i = 0; i < A.rows; ++i) softmax_row(A, out, i);
    return push(std::move(out), "row_softmax", {a}, [a](Graph& g, int self) {
      const Tensor<T>&G = g.nodes_[self].grad, &Y = g.nodes_[self].value;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.rows; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < G.cols; ++j)
          dot += G.at(i, j) * Y.at(i, j);
        for (std::size_t j = 0; j < G.cols; ++j)
          dA.at(i, j) += Y.at(i, j) * (G.at(i, j) - dot);
      }
    });
  }

  Var log_softmax_row(Var a) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.rows, A.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
      T mx = A.at(i, 0);
      for (std::size_t j = 1; j < A.cols; ++j) mx = std::max(mx, A.at(i, j));
      T lse = 0;
      for (std::size_t j = 0; j < A.cols; ++j)
        lse += std::exp(A.at(i, j) - mx);
      lse = mx + std::log(lse);
      for (std::size_t j = 0; j < A.cols; ++j) out.at(i, j) = A.at(i, j) - lse;
    }
    return push(std::move(out), "log_softmax_row", {a},
                [a](Graph& g, int self) {
                  const Tensor<T>&G = g.nodes_[self].grad,
                                 &Y = g.nodes_[self].value;
                  Tensor<T>& dA = g.grad_buf(a);
                  for (std::size_t i = 0; i < G.rows; ++i) {
                    T gs = 0;
                    for (std::size_t j = 0; j < G.cols; ++j) gs += G.at(i, j);
                    for (std::size_t j = 0; j < G.cols; ++j)
                      dA.at(i, j) +=
                          G.at(i, j) - std::exp(Y.at(i, j)) * gs;
                  }
                });
  }

  // Gradient passes through strictly inside (lo, hi) and is zero where the
  // clamp is active.
  Var clamp(Var a, T lo, T hi) {
    Tensor<T> out = val(a);
    for (T& x : out.v) x = std::min(hi, std::max(lo, x));
    return push(std::move(out), "clamp", {a}, [a, lo, hi](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      const Tensor<T>& A = g.val(a);
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i)
        if (A.v[i] > lo && A.v[i] < hi) dA.v[i] += G.v[i];
    });
  }

  Var log(Var a) {
    Tensor<T> out = val(a);
    for (T& x : out.v) x = std::log(x);
    return push(std::move(out), "log", {a}, [a](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      const Tensor<T>& A = g.val(a);
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA.v[i] += G.v[i] / A.v[i];
    });
  }

  // x^e for x >= 0 with constant exponent.
  Var pow_const(Var a, T e) {
    Tensor<T> out = val(a);
    for (T& x : out.v) x = std::pow(x, e);
    return push(std::move(out), "pow_const", {a}, [a, e](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      const Tensor<T>& A = g.val(a);
      Tensor<T>& dA = g.grad_buf(a);
      if (e == T(0)) return;
      for (std::size_t i = 0; i < G.size(); ++i) {
        const T x = A.v[i];
        if (x == T(0) && e < T(1)) continue;
        dA.v[i] += G.v[i] * e * std::pow(x, e - T(1));
      }
    });
  }

  Var sum(Var a) {
    const Tensor<T>& A = val(a);
    T s = 0;
    for (const T& x : A.v) s += x;
    Tensor<T> out(1, 1, s);
    return push(std::move(out), "sum", {a}, [a](Graph& g, int self) {
      const T gs = g.nodes_[self].grad.v[0];
      Tensor<T>& dA = g.grad_buf(a);
      for (T& x : dA.v) x += gs;
    });
  }

  Var mean(Var a) {
    const std::size_t n = val(a).size();
    return scale(sum(a), T(1) / static_cast<T>(n));
  }

  // Mean of the k largest entries of a vector; gradient splits evenly over
  // the selected entries, ties resolved toward lower index.
  Var topk_mean(Var a, std::size_t k) {
    const Tensor<T>& A = val(a);
    if (A.rows != 1 && A.cols != 1)
      fail(ErrorCode::shape_mismatch, "topk_mean: expects a vector");
    auto idx = topk_indices(A.v, k);
    T s = 0;
    for (std::size_t i : idx) s += A.v[i];
    Tensor<T> out(1, 1, s / static_cast<T>(k));
    return push(std::move(out), "topk_mean", {a},
                [a, idx, k](Graph& g, int self) {
                  const T gs = g.nodes_[self].grad.v[0] / static_cast<T>(k);
                  Tensor<T>& dA = g.grad_buf(a);
                  for (std::size_t i : idx) dA.v[i] += gs;
                });
  }

  // Per-column top-k mean of a [t x M] matrix -> [1 x M].
  Var col_topk_mean(Var a, std::size_t k) {
    const Tensor<T>& A = val(a);
    std::vector<std::vector<std::size_t>> sel(A.cols);
    Tensor<T> out(1, A.cols);
    std::vector<T> colbuf(A.rows);
    for (std::size_t j = 0; j < A.cols; ++j) {
      for (std::size_t i = 0; i < A.rows; ++i) colbuf[i] = A.at(i, j);
      sel[j] = topk_indices(colbuf, k);
      T s = 0;
      for (std::size_t i : sel[j]) s += colbuf[i];
      out.v[j] = s / static_cast<T>(k);
    }
    return push(std::move(out), "col_topk_mean", {a},
                [a, sel, k](Graph& g, int self) {
                  const Tensor<T>& G = g.nodes_[self].grad;
                  Tensor<T>& dA = g.grad_buf(a);
                  for (std::size_t j = 0; j < G.cols; ++j) {
                    const T gs = G.v[j] / static_cast<T>(k);
                    for (std::size_t i : sel[j]) dA.at(i, j) += gs;
                  }
                });
  }

  // Average pooling with stride 2 along rows (time).
  Var avgpool2(Var a) {
    const Tensor<T>& A = val(a);
    if (A.rows % 2 != 0)
      fail(ErrorCode::shape_mismatch, "avgpool2: odd length");
    Tensor<T> out(A.rows / 2, A.cols);
    for (std::size_t i = 0; i < out.rows; ++i)
      for (std::size_t j = 0; j < A.cols; ++j)
        out.at(i, j) = (A.at(2 * i, j) + A.at(2 * i + 1, j)) * T(0.5);
    return push(std::move(out), "avgpool2", {a}, [a](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.rows; ++i)
        for (std::size_t j = 0; j < G.cols; ++j) {
          const T half = G.at(i, j) * T(0.5);
          dA.at(2 * i, j) += half;
          dA.at(2 * i + 1, j) += half;
        }
    });
  }

  // Depthwise temporal convolution of width 3. Kernel is [3 x d].
  Var dwconv3(Var x, Var k, PadMode pad) {
    const Tensor<T>&X = val(x), &K = val(k);
    if (K.rows != 3 || K.cols != X.cols)
      fail(ErrorCode::shape_mismatch, "dwconv3: kernel shape");
    const std::size_t t = X.rows, d = X.cols;
    Tensor<T> out(t, d);
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t im = pad_index(i, -1, t, pad);
      const std::size_t ip = pad_index(i, +1, t, pad);
      for (std::size_t c = 0; c < d; ++c)
        out.at(i, c) = K.at(0, c) * X.at(im, c) + K.at(1, c) * X.at(i, c) +
                       K.at(2, c) * X.at(ip, c);
    }
    return push(std::move(out), "dwconv3", {x, k},
                [x, k, pad](Graph& g, int self) {
                  const Tensor<T>& G = g.nodes_[self].grad;
                  const Tensor<T>&X = g.val(x), &K = g.val(k);
                  Tensor<T>&dX = g.grad_buf(x), &dK = g.grad_buf(k);
                  const std::size_t t = X.rows, d = X.cols;
                  for (std::size_t i = 0; i < t; ++i) {
                    const std::size_t im = pad_index(i, -1, t, pad);
                    const std::size_t ip = pad_index(i, +1, t, pad);
                    for (std::size_t c = 0; c < d; ++c) {
                      const T gi = G.at(i, c);
                      dX.at(im, c) += K.at(0, c) * gi;
                      dX.at(i, c) += K.at(1, c) * gi;
                      dX.at(ip, c) += K.at(2, c) * gi;
                      dK.at(0, c) += X.at(im, c) * gi;
                      dK.at(1, c) += X.at(i, c) * gi;
                      dK.at(2, c) += X.at(ip, c) * gi;
                    }
                  }
                });
  }

  // Linear interpolation along rows to n rows, endpoints pinned.
  Var upsample_linear(Var a, std::size_t n) {
    const Tensor<T>& A = val(a);
    auto plan = interp_plan(A.rows, n);
    Tensor<T> out(n, A.cols);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < A.cols; ++j)
        out.at(i, j) = static_cast<T>(plan[i].w0) * A.at(plan[i].i0, j) +
                       static_cast<T>(plan[i].w1) * A.at(plan[i].i1, j);
    return push(std::move(out), "upsample_linear", {a},
                [a, plan](Graph& g, int self) {
                  const Tensor<T>& G = g.nodes_[self].grad;
                  Tensor<T>& dA = g.grad_buf(a);
                  for (std::size_t i = 0; i < G.rows; ++i)
                    for (std::size_t j = 0; j < G.cols; ++j) {
                      dA.at(plan[i].i0, j) +=
                          static_cast<T>(plan[i].w0) * G.at(i, j);
                      dA.at(plan[i].i1, j) +=
                          static_cast<T>(plan[i].w1) * G.at(i, j);
                    }
                });
  }

  // Rows scaled to unit Euclidean norm. Zero rows either fail or pass
  // through as zeros (counted in *zero_rows when provided).
  Var row_l2_normalize(Var a, ZeroNormPolicy policy, int* zero_rows = nullptr) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.rows, A.cols);
    std::vector<T> norms(A.rows, T(0));
    for (std::size_t i = 0; i < A.rows; ++i) {
      T s = 0;
      for (std::size_t j = 0; j < A.cols; ++j) s += A.at(i, j) * A.at(i, j);
      const T nrm = std::sqrt(s);
      norms[i] = nrm;
      if (nrm == T(0)) {
        if (policy == ZeroNormPolicy::fail)
          fail(ErrorCode::non_finite,
               "row_l2_normalize: zero-norm row " + std::to_string(i));
        if (zero_rows) ++*zero_rows;
        continue;  // row stays zero
      }
      for (std::size_t j = 0; j < A.cols; ++j) out.at(i, j) = A.at(i, j) / nrm;
    }
    return push(std::move(out), "row_l2_normalize", {a},
                [a, norms](Graph& g, int self) {
                  const Tensor<T>&G = g.nodes_[self].grad,
                                 &Y = g.nodes_[self].value;
                  Tensor<T>& dA = g.grad_buf(a);
                  for (std::size_t i = 0; i < G.rows; ++i) {
                    if (norms[i] == T(0)) continue;
                    T dot = 0;
                    for (std::size_t j = 0; j < G.cols; ++j)
                      dot += G.at(i, j) * Y.at(i, j);
                    for (std::size_t j = 0; j < G.cols; ++j)
                      dA.at(i, j) +=
                          (G.at(i, j) - Y.at(i, j) * dot) / norms[i];
                  }
                });
  }

  // Elementwise division by a learnable 1x1 scalar.
  Var div_by_scalar(Var a, Var s) {
    const Tensor<T>& A = val(a);
    const T sv = val(s).v[0];
    if (sv == T(0)) fail(ErrorCode::non_finite, "div_by_scalar: zero divisor");
    Tensor<T> out = A;
    for (T& x : out.v) x /= sv;
    return push(std::move(out), "div_by_scalar", {a, s},
                [a, s](Graph& g, int self) {
                  const Tensor<T>&G = g.nodes_[self].grad,
                                 &Y = g.nodes_[self].value;
                  const T sv = g.val(s).v[0];
                  Tensor<T>&dA = g.grad_buf(a), &dS = g.grad_buf(s);
                  for (std::size_t i = 0; i < G.size(); ++i) {
                    dA.v[i] += G.v[i] / sv;
                    dS.v[0] -= G.v[i] * Y.v[i] / sv;
                  }
                });
  }

  // Gathers entries of a vector -> [k x 1].
  Var pick(Var a, std::vector<std::size_t> idx) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(idx.size(), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) out.v[i] = A.v[idx[i]];
    return push(std::move(out), "pick", {a}, [a, idx](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < idx.size(); ++i) dA.v[idx[i]] += G.v[i];
    });
  }

  // Copies row r -> [1 x d].
  Var row(Var a, std::size_t r) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(1, A.cols);
    for (std::size_t j = 0; j < A.cols; ++j) out.v[j] = A.at(r, j);
    return push(std::move(out), "row", {a}, [a, r](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t j = 0; j < G.cols; ++j) dA.at(r, j) += G.v[j];
    });
  }

  // Copies column c -> [t x 1].
  Var col(Var a, std::size_t c) {
    const Tensor<T>& A = val(a);
    Tensor<T> out(A.rows, 1);
    for (std::size_t i = 0; i < A.rows; ++i) out.v[i] = A.at(i, c);
    return push(std::move(out), "col", {a}, [a, c](Graph& g, int self) {
      const Tensor<T>& G = g.nodes_[self].grad;
      Tensor<T>& dA = g.grad_buf(a);
      for (std::size_t i = 0; i < G.rows; ++i) dA.at(i, c) += G.v[i];
    });
  }

  // Prompt composition: out[m] = e_cat[m] + (m==0 ? n_p : a_p) + q_row.
  Var compose_prompt(Var e_cat, Var n_p, Var a_p, Var q_row) {
    const Tensor<T>& E = val(e_cat);
    const Tensor<T>&N = val(n_p), &A = val(a_p), &Q = val(q_row);
    if (N.cols != E.cols || A.cols != E.cols || Q.cols != E.cols)
      fail(ErrorCode::shape_mismatch, "compose_prompt: widths");
    Tensor<T> out(E.rows, E.cols);
    for (std::size_t m = 0; m < E.rows; ++m) {
      const Tensor<T>& S = (m == 0) ? N : A;
      for (std::size_t j = 0; j < E.cols; ++j)
        out.at(m, j) = E.at(m, j) + S.v[j] + Q.v[j];
    }
    return push(std::move(out), "compose_prompt", {e_cat, n_p, a_p, q_row},
                [e_cat, n_p, a_p, q_row](Graph& g, int self) {
                  const Tensor<T>& G = g.nodes_[self].grad;
                  Tensor<T>& dE = g.grad_buf(e_cat);
                  Tensor<T>& dN = g.grad_buf(n_p);
                  Tensor<T>& dA = g.grad_buf(a_p);
                  Tensor<T>& dQ = g.grad_buf(q_row);
                  for (std::size_t m = 0; m < G.rows; ++m)
                    for (std::size_t j = 0; j < G.cols; ++j) {
                      dE.at(m, j) += G.at(m, j);
                      (m == 0 ? dN : dA).v[j] += G.at(m, j);
                      dQ.v[j] += G.at(m, j);
                    }
                });
  }

  // Seeds d(loss)/d(loss) = seed and sweeps the tape backwards. loss must be
  // a 1x1 node. Repeatable bit-for-bit: fixed iteration order throughout.
  void backward(Var loss, T seed = T(1)) {
    if (val(loss).size() != 1)
      fail(ErrorCode::shape_mismatch, "backward: loss must be scalar");
    grad_buf(loss).v[0] += seed;
    for (int i = loss.i; i >= 0; --i) {
      Node& node = nodes_[i];
      if (!node.has_grad || !node.back) continue;
      node.back(*this, i);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    std::function<void(Graph&, int)> back;
  };

  static T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

  static void softmax_row(const Tensor<T>& in, Tensor<T>& out, std::size_t i) {
    T mx = in.at(i, 0);
    for (std::size_t j = 1; j < in.cols; ++j) mx = std::max(mx, in.at(i, j));
    T s = 0;
    for (std::size_t j = 0; j < in.cols; ++j) {
      out.at(i, j) = std::exp(in.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (std::size_t j = 0; j < in.cols; ++j) out.at(i, j) /= s;
  }

  static std::size_t pad_index(std::size_t i, int off, std::size_t t,
                               PadMode pad) {
    const long long raw = static_cast<long long>(i) + off;
    if (raw >= 0 && raw < static_cast<long long>(t))
      return static_cast<std::size_t>(raw);
    if (pad == PadMode::replicate)
      return raw < 0 ? 0 : t - 1;
    return static_cast<std::size_t>((raw + static_cast<long long>(t)) %
                                    static_cast<long long>(t));
  }

  struct InterpEntry {
    std::size_t i0, i1;
    double w0, w1;
  };

  static std::vector<InterpEntry> interp_plan(std::size_t t_in,
                                              std::size_t n) {
    if (t_in < 1 || n < 1)
      fail(ErrorCode::shape_mismatch, "upsample_linear: empty input");
    std::vector<InterpEntry> plan(n);
    for (std::size_t i = 0; i < n; ++i) {
      double pos = 0.0;
      if (n > 1 && t_in > 1)
        pos = static_cast<double>(i) * static_cast<double>(t_in - 1) /
              static_cast<double>(n - 1);
      const auto i0 = static_cast<std::size_t>(pos);
      const std::size_t i1 = std::min(i0 + 1, t_in - 1);
      const double w1 = pos - static_cast<double>(i0);
      plan[i] = {i0, i1, 1.0 - w1, w1};
    }
    return plan;
  }

  const Tensor<T>& val(Var v) const { return nodes_[v.i].value; }

  Tensor<T>& grad_buf(Var v) { return grad_buf(v.i); }
  Tensor<T>& grad_buf(int i) {
    Node& node = nodes_[i];
    if (!node.has_grad) {
      node.grad = Tensor<T>(node.value.rows, node.value.cols);
      node.has_grad = true;
    }
    return node.grad;
  }

  Var push(Tensor<T> value, const char* op, std::initializer_list<Var>,
           std::function<void(Graph&, int)> back = nullptr) {
    if (!value.all_finite())
      fail(ErrorCode::non_finite,
           std::string("non-finite intermediate in op '") + op + "'");
    nodes_.push_back(Node{std::move(value), {}, false, std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace cplvad
