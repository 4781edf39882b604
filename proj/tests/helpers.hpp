#pragma once

#include <functional>
#include <vector>

#include "vlcp/autodiff.hpp"
#include "vlcp/gradcheck.hpp"
#include "vlcp/random.hpp"

namespace vlcp::test {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

// Max relative error between backward() and central differences of a
// scalar-valued function of several inputs, over all inputs.
inline double gradcheck(
    const std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double h = 1e-5) {
  std::vector<ad::Var<double>> leaves;
  for (auto& t : inputs) leaves.push_back(ad::leaf(t));
  ad::backward(f(leaves));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto partial = [&](const Tensor<double>& x) {
      std::vector<ad::Var<double>> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j)
        vs.push_back(ad::constant(j == k ? x : inputs[j]));
      return f(vs).value();
    };
    const auto fd = finite_difference_grad<double>(partial, inputs[k], h);
    const auto& an = leaves[k].has_grad() ? leaves[k].grad() : Tensor<double>(inputs[k].shape());
    worst = std::max(worst, max_relative_error(an, fd));
  }
  return worst;
}

}  // namespace vlcp::test
