#include "vlcp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace vlcp {

template <typename T>
Tensor<T> finite_difference_grad(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                                 const Tensor<T>& x, double h) {
  auto eval = [&](const Tensor<T>& at) {
    Tensor<T> y = f(at);
    if (y.size() != 1)
      throw ContractError("finite_difference_grad: f must be scalar-valued, got " +
                          shape_str(y.shape()));
    return static_cast<double>(y[0]);
  };
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + static_cast<T>(h);
    const double up = eval(probe);
    probe[i] = orig - static_cast<T>(h);
    const double down = eval(probe);
    probe[i] = orig;
    grad[i] = static_cast<T>((up - down) / (2.0 * h));
  }
  return grad;
}

template <typename T>
std::vector<T> finite_difference_at(Tensor<T>& x, const std::vector<std::size_t>& indices,
                                    const std::function<T()>& loss, double h) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= x.size()) throw ContractError("finite_difference_at: index out of range");
    const T orig = x[i];
    x[i] = orig + static_cast<T>(h);
    const double up = loss();
    x[i] = orig - static_cast<T>(h);
    const double down = loss();
    x[i] = orig;
    out.push_back(static_cast<T>((up - down) / (2.0 * h)));
  }
  return out;
}

double relative_error(double a, double b, double floor) {
  const double den = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / den;
}

template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor) {
  if (a.shape() != b.shape())
    throw DimensionError("max_relative_error: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

template Tensor<float> finite_difference_grad<float>(
    const std::function<Tensor<float>(const Tensor<float>&)>&, const Tensor<float>&, double);
template Tensor<double> finite_difference_grad<double>(
    const std::function<Tensor<double>(const Tensor<double>&)>&, const Tensor<double>&, double);
template std::vector<float> finite_difference_at<float>(Tensor<float>&, const std::vector<std::size_t>&,
                                                        const std::function<float()>&, double);
template std::vector<double> finite_difference_at<double>(Tensor<double>&,
                                                          const std::vector<std::size_t>&,
                                                          const std::function<double()>&, double);
template double max_relative_error<float>(const Tensor<float>&, const Tensor<float>&, double);
template double max_relative_error<double>(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace vlcp
