#pragma once

#include <string>

#include "vlcp/autodiff.hpp"
#include "vlcp/random.hpp"

namespace vlcp::nn {

// y = x W + b with W [in x out].
template <typename T>
struct Linear {
  ad::Var<T> weight;
  ad::Var<T> bias;

  static Linear create(ad::ParameterStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, double std);
  ad::Var<T> operator()(const ad::Var<T>& x) const;
  // Same map with the weights cut off from the gradient tape.
  ad::Var<T> detached(const ad::Var<T>& x) const;
};

template <typename T>
struct LayerNorm {
  ad::Var<T> gain;
  ad::Var<T> bias;

  static LayerNorm create(ad::ParameterStore<T>& store, const std::string& name, std::size_t dim);
  ad::Var<T> operator()(const ad::Var<T>& x) const;
};

Tensor<double> normal_tensor(Rng& rng, Shape shape, double std);

template <typename T>
Tensor<T> normal_init(Rng& rng, Shape shape, double std) {
  return normal_tensor(rng, std::move(shape), std).template cast<T>();
}

// Scaled dot-product attention over pre-projected (and already rotated)
// q, k, v of shape [N x heads*head_dim]. Scores are divided by
// sqrt(head_dim); `causal` masks keys after each query.
template <typename T>
ad::Var<T> multi_head_attention(const ad::Var<T>& q, const ad::Var<T>& k, const ad::Var<T>& v,
                                int heads, bool causal);

// 1D rotary tables for positions 0..n-1: pair j rotates by pos * base^(-2j/head_dim).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> rope1d_tables(std::size_t n, int head_dim, int heads,
                                              double base);

}  // namespace vlcp::nn
