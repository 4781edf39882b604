#include "vlcp/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vlcp/ops.hpp"

namespace vlcp::align {

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0)) throw ParameterError("sinkhorn epsilon must be positive");
  if (n_iters < 1) throw ParameterError("sinkhorn n_iters must be at least 1");
  if (!(tol > 0.0)) throw ParameterError("sinkhorn tol must be positive");
}

template <typename T>
ad::Var<T> pool(const ad::Var<T>& features) {
  if (!features.defined() || features.size() == 0 || features.rows() == 0)
    throw ContractError("pool: empty feature set");
  return ad::mean(features, 0);
}

template <typename T>
ad::Var<T> project_prototypes(const ad::Var<T>& features, const ad::Var<T>& prototypes) {
  if (features.cols() != prototypes.cols())
    throw ContractError("project_prototypes: features " + shape_str(features.shape()) +
                        " vs prototypes " + shape_str(prototypes.shape()));
  return ad::matmul_nt(ad::detach(prototypes), features);
}

namespace {

double logsumexp(const double* x, std::size_t n, std::size_t stride) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i * stride]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i * stride] - m);
  return m + std::log(s);
}

}  // namespace

SinkhornResult sinkhorn_targets(const Tensor<double>& scores, const std::vector<double>& prior,
                                const SinkhornConfig& cfg) {
  cfg.validate();
  const std::size_t k = scores.rows(), b = scores.cols();
  if (scores.rank() != 2) throw ContractError("sinkhorn: scores must be [K x B]");
  if (prior.size() != k)
    throw ContractError("sinkhorn: prior has " + std::to_string(prior.size()) +
                        " entries for " + std::to_string(k) + " prototypes");
  if (!scores.all_finite()) throw NumericalError("sinkhorn", "non-finite scores");
  std::vector<double> log_u(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!(prior[i] > 0.0) || !std::isfinite(prior[i]))
      throw NumericalError("sinkhorn", "prior entry " + std::to_string(i) + " is " +
                                           std::to_string(prior[i]) +
                                           "; every row needs positive target mass");
    log_u[i] = std::log(prior[i]);
  }

  // log M = (C - colmax) / eps
  Tensor<double> lm({k, b});
  for (std::size_t j = 0; j < b; ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) m = std::max(m, scores.at(i, j));
    for (std::size_t i = 0; i < k; ++i) lm.at(i, j) = (scores.at(i, j) - m) / cfg.epsilon;
  }

  auto normalize_columns = [&](double log_target) {
    for (std::size_t j = 0; j < b; ++j) {
      const double z = logsumexp(lm.data() + j, k, b);
      if (!std::isfinite(z))
        throw NumericalError("sinkhorn", "column " + std::to_string(j) +
                                             " lost all mass");
      for (std::size_t i = 0; i < k; ++i) lm.at(i, j) += log_target - z;
    }
  };
  auto row_tv = [&] {
    double tv = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < b; ++j) r += std::exp(lm.at(i, j));
      tv += std::abs(r - prior[i]);
    }
    return 0.5 * tv;
  };

  SinkhornResult res;
  if (cfg.two_sided) {
    const double log_col = -std::log(static_cast<double>(b));
    for (int it = 0; it < cfg.n_iters; ++it) {
      for (std::size_t i = 0; i < k; ++i) {
        const double z = logsumexp(lm.data() + i * b, b, 1);
        if (!std::isfinite(z))
          throw NumericalError("sinkhorn",
                               "row " + std::to_string(i) + " lost all mass");
        for (std::size_t j = 0; j < b; ++j) lm.at(i, j) += log_u[i] - z;
      }
      normalize_columns(log_col);
      res.row_tv.push_back(row_tv());
    }
  } else {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < b; ++j) lm.at(i, j) += log_u[i];
    normalize_columns(-std::log(static_cast<double>(b)));
    res.row_tv.push_back(row_tv());
  }
  normalize_columns(0.0);

  res.p = Tensor<double>({k, b});
  for (std::size_t i = 0; i < lm.size(); ++i) res.p[i] = std::exp(lm[i]);
  return res;
}

template <typename T>
ad::Var<T> alignment_loss(const ad::Var<T>& vision_scores, const Tensor<double>& targets,
                          const SinkhornConfig& cfg) {
  cfg.validate();
  if (vision_scores.shape() != targets.shape())
    throw ContractError("alignment_loss: scores " + shape_str(vision_scores.shape()) +
                        " vs targets " + shape_str(targets.shape()));
  const std::size_t k = targets.rows(), b = targets.cols();
  for (std::size_t j = 0; j < b; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += targets.at(i, j);
    if (std::abs(s - 1.0) > cfg.tol)
      throw ContractError("alignment_loss: target column " + std::to_string(j) + " sums to " +
                          std::to_string(s));
  }
  return ad::soft_cross_entropy(vision_scores, targets.template cast<T>(), 0, cfg.epsilon);
}

double mean_column_entropy(const Tensor<double>& p) {
  const std::size_t k = p.rows(), b = p.cols();
  double h = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double v = p.at(i, j);
      if (v > 0.0) h -= v * std::log(v);
    }
  return h / static_cast<double>(b);
}

std::vector<double> prior_from_counts(const std::vector<double>& counts, double floor_frac) {
  if (counts.empty()) throw ContractError("prior_from_counts: empty vocabulary");
  double total = 0.0;
  for (double c : counts) {
    if (c < 0.0 || !std::isfinite(c)) throw ContractError("prior_from_counts: bad count");
    total += c;
  }
  const double k = static_cast<double>(counts.size());
  std::vector<double> u(counts.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = total > 0.0 && counts[i] > 0.0 ? counts[i] / total : floor_frac / k;
  double s = 0.0;
  for (double v : u) s += v;
  for (double& v : u) v /= s;
  return u;
}

template ad::Var<float> pool<float>(const ad::Var<float>&);
template ad::Var<double> pool<double>(const ad::Var<double>&);
template ad::Var<float> project_prototypes<float>(const ad::Var<float>&, const ad::Var<float>&);
template ad::Var<double> project_prototypes<double>(const ad::Var<double>&,
                                                    const ad::Var<double>&);
template ad::Var<float> alignment_loss<float>(const ad::Var<float>&, const Tensor<double>&,
                                              const SinkhornConfig&);
template ad::Var<double> alignment_loss<double>(const ad::Var<double>&, const Tensor<double>&,
                                                const SinkhornConfig&);

}  // namespace vlcp::align
