#pragma once

// Central-difference gradients, kept independent of the autodiff path so
// they can serve as its oracle.

#include <functional>
#include <vector>

#include "vlcp/tensor.hpp"

namespace vlcp {

// (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x. f must return a
// single-element tensor; anything else is a ContractError.
template <typename T>
Tensor<T> finite_difference_grad(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                                 const Tensor<T>& x, double h = 1e-5);

// Same rule, but perturbs `x` in place at the listed flat indices and calls a
// nullary loss. Used to probe model parameters without rebuilding the model.
// x is restored bit-exactly afterwards.
template <typename T>
std::vector<T> finite_difference_at(Tensor<T>& x, const std::vector<std::size_t>& indices,
                                    const std::function<T()>& loss, double h = 1e-5);

// |a - b| / max(|a|, |b|, floor). The floor keeps round-off on near-zero
// gradients from dominating.
double relative_error(double a, double b, double floor = 1e-6);

template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-6);

}  // namespace vlcp
