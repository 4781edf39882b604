#pragma once

// Differentiable operations on rank-2 values. A rank-1 tensor of length n
// is treated as a 1 x n row wherever a row vector is expected.

#include <cstdint>
#include <vector>

#include "vlcp/autodiff.hpp"

namespace vlcp::ad {

// [m x k] . [k x n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
// [m x k] . [n x k]^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> transpose(const Var<T>& a);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
// a[m x n] + row[n], broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <typename T>
Var<T> scale(const Var<T>& a, T s);

template <typename T>
Var<T> gelu(const Var<T>& a);
template <typename T>
Var<T> exp(const Var<T>& a);
template <typename T>
Var<T> log(const Var<T>& a);

// axis 0 reduces rows (-> 1 x n); axis 1 reduces columns (-> m x 1).
template <typename T>
Var<T> sum(const Var<T>& a, int axis);
template <typename T>
Var<T> mean(const Var<T>& a, int axis);
template <typename T>
Var<T> sum_all(const Var<T>& a);
template <typename T>
Var<T> mean_all(const Var<T>& a);

struct SoftmaxOptions {
  int axis = 1;
  double temperature = 1.0;
  // Row i only sees columns j <= i + causal_offset (axis 1 only).
  bool causal = false;
  std::size_t causal_offset = 0;
};

// exp((x - max) / t) normalized along the axis. Throws ParameterError for
// t <= 0.
template <typename T>
Var<T> softmax(const Var<T>& x, const SoftmaxOptions& opt = {});
template <typename T>
Var<T> log_softmax(const Var<T>& x, const SoftmaxOptions& opt = {});

// Per-row normalization: (x - mean) / sqrt(var + eps) * gain + bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  double eps = 1e-6);

template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<std::int32_t>& ids);

// Mean over rows of -log softmax(logits)[row, target[row]].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits,
                     const std::vector<std::int32_t>& targets);

// -(1/G) sum_g sum_k target[g,k] log softmax(logits / t)[g,k], where the
// groups g run along the non-softmax axis. `target` is a constant.
template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& target,
                          int axis = 1, double temperature = 1.0);

// Same value, no gradient upstream.
template <typename T>
Var<T> detach(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t len);
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<std::size_t>& rows);

// Rotates channel pairs (2i, 2i+1) of every row by the angle whose cosine
// and sine are cos_t(row, i), sin_t(row, i). Tables are [rows x cols/2].
template <typename T>
Var<T> rotate_pairs(const Var<T>& x, const Tensor<T>& cos_t,
                    const Tensor<T>& sin_t);

}  // namespace vlcp::ad
