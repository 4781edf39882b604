#include "vlcp/layers.hpp"

#include <cmath>

#include "vlcp/ops.hpp"

namespace vlcp::nn {

Tensor<double> normal_tensor(Rng& rng, Shape shape, double std) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = std * rng.normal();
  return t;
}

template <typename T>
Linear<T> Linear<T>::create(ad::ParameterStore<T>& store, const std::string& name,
                            std::size_t in, std::size_t out, Rng& rng, double std) {
  Linear l;
  l.weight = store.add(name + ".weight", normal_init<T>(rng, {in, out}, std));
  l.bias = store.add(name + ".bias", Tensor<T>({out}));
  return l;
}

template <typename T>
ad::Var<T> Linear<T>::operator()(const ad::Var<T>& x) const {
  return ad::add_row(ad::matmul(x, weight), bias);
}

template <typename T>
ad::Var<T> Linear<T>::detached(const ad::Var<T>& x) const {
  return ad::add_row(ad::matmul(x, ad::detach(weight)), ad::detach(bias));
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ad::ParameterStore<T>& store, const std::string& name,
                                  std::size_t dim) {
  LayerNorm n;
  n.gain = store.add(name + ".gain", Tensor<T>::full({dim}, T(1)));
  n.bias = store.add(name + ".bias", Tensor<T>({dim}));
  return n;
}

template <typename T>
ad::Var<T> LayerNorm<T>::operator()(const ad::Var<T>& x) const {
  return ad::layer_norm(x, gain, bias, 1e-6);
}

template <typename T>
ad::Var<T> multi_head_attention(const ad::Var<T>& q, const ad::Var<T>& k, const ad::Var<T>& v,
                                int heads, bool causal) {
  const std::size_t width = q.cols();
  if (heads <= 0 || width % heads != 0)
    throw DimensionError("attention width " + std::to_string(width) +
                         " is not divisible by " + std::to_string(heads) + " heads");
  const std::size_t hd = width / heads;
  const ad::SoftmaxOptions opt{.axis = 1,
                               .temperature = std::sqrt(static_cast<double>(hd)),
                               .causal = causal,
                               .causal_offset = 0};
  if (heads == 1) return ad::matmul(ad::softmax(ad::matmul_nt(q, k), opt), v);
  std::vector<ad::Var<T>> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    auto qh = ad::slice_cols(q, off, hd);
    auto kh = ad::slice_cols(k, off, hd);
    auto vh = ad::slice_cols(v, off, hd);
    outs.push_back(ad::matmul(ad::softmax(ad::matmul_nt(qh, kh), opt), vh));
  }
  return ad::concat_cols(outs);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> rope1d_tables(std::size_t n, int head_dim, int heads,
                                              double base) {
  if (head_dim % 2 != 0) throw ParameterError("1D rotary needs an even head_dim");
  const std::size_t half = static_cast<std::size_t>(head_dim / 2);
  const std::size_t width = half * heads;
  Tensor<T> cs({n, width}), sn({n, width});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t j = 0; j < half; ++j) {
      const double a = static_cast<double>(p) * std::pow(base, -2.0 * j / head_dim);
      for (int h = 0; h < heads; ++h) {
        cs[p * width + h * half + j] = static_cast<T>(std::cos(a));
        sn[p * width + h * half + j] = static_cast<T>(std::sin(a));
      }
    }
  return {std::move(cs), std::move(sn)};
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template ad::Var<float> multi_head_attention<float>(const ad::Var<float>&, const ad::Var<float>&,
                                                    const ad::Var<float>&, int, bool);
template ad::Var<double> multi_head_attention<double>(const ad::Var<double>&,
                                                      const ad::Var<double>&,
                                                      const ad::Var<double>&, int, bool);
template std::pair<Tensor<float>, Tensor<float>> rope1d_tables<float>(std::size_t, int, int, double);
template std::pair<Tensor<double>, Tensor<double>> rope1d_tables<double>(std::size_t, int, int,
                                                                         double);

}  // namespace vlcp::nn
