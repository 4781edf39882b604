#pragma once

// Vision-language alignment: pooled features are scored against the frozen
// word-embedding prototypes, the text-side scores become soft targets via
// Sinkhorn-Knopp, and the vision side is trained toward them.

#include <vector>

#include "vlcp/autodiff.hpp"

namespace vlcp::align {

struct SinkhornConfig {
  double epsilon = 0.005;
  int n_iters = 3;
  double tol = 1e-6;  // column-sum tolerance accepted by alignment_loss
  // Two-sided alternates row (prior) and column (1/B) scaling. One-sided
  // applies the prior once and normalizes each column.
  bool two_sided = true;

  void validate() const;
  bool operator==(const SinkhornConfig&) const = default;
};

struct SinkhornResult {
  Tensor<double> p;                  // [K x B], columns sum to 1
  std::vector<double> row_tv;        // TV(row mass, prior) after each iteration
};

// Mean over rows: [n x D] -> [1 x D].
template <typename T>
ad::Var<T> pool(const ad::Var<T>& features);

// C = W F^T with W [K x D] detached, F [B x D] -> [K x B].
template <typename T>
ad::Var<T> project_prototypes(const ad::Var<T>& features, const ad::Var<T>& prototypes);

// Soft targets from text-side scores C_t [K x B] and prior u_W (length K).
// Runs in f64, log domain; the result carries no gradient.
SinkhornResult sinkhorn_targets(const Tensor<double>& scores, const std::vector<double>& prior,
                                const SinkhornConfig& cfg);

// -(1/B) sum_b sum_k p_t[k,b] log softmax(C_v[:,b] / epsilon)[k].
template <typename T>
ad::Var<T> alignment_loss(const ad::Var<T>& vision_scores, const Tensor<double>& targets,
                          const SinkhornConfig& cfg);

// Mean column entropy, sum over columns of -sum_k p log p, divided by B.
double mean_column_entropy(const Tensor<double>& p);

// Word counts (indexed by id) -> prior with `floor_frac / K` added to
// unseen words, renormalized.
std::vector<double> prior_from_counts(const std::vector<double>& counts,
                                      double floor_frac = 0.1);

}  // namespace vlcp::align
