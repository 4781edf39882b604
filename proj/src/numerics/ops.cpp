#include "vlcp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vlcp/kernels.hpp"

namespace vlcp::ad {
namespace {

template <typename T>
Tensor<T>* grad_in(Node<T>& self, std::size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? &in->grad_buffer() : nullptr;
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
Shape mat_shape(std::size_t r, std::size_t c) {
  return Shape{r, c};
}

// Iteration geometry for a reduction along `axis` of a rank-2 view.
struct AxisLayout {
  std::size_t groups, len, elem_stride, group_stride;
};

template <typename T>
AxisLayout axis_layout(const Tensor<T>& x, int axis) {
  const std::size_t r = x.rows(), c = x.cols();
  if (axis == 1) return {r, c, 1, c};
  if (axis == 0) return {c, r, c, 1};
  throw ParameterError("axis must be 0 or 1, got " + std::to_string(axis));
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  Tensor<T> out(mat_shape<T>(m, n));
  kernels::active<T>().gemm_nn(m, n, k, a.value().data(), k, b.value().data(), n,
                               out.data(), n, false);
  return make_op<T>("matmul", std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    const auto& kt = kernels::active<T>();
    const T* g = self.grad.data();
    if (auto* da = grad_in(self, 0))
      kt.gemm_nt(m, k, n, g, n, self.inputs[1]->value.data(), n, da->data(), k, true);
    if (auto* db = grad_in(self, 1))
      kt.gemm_tn(k, n, m, self.inputs[0]->value.data(), k, g, n, db->data(), n, true);
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  Tensor<T> out(mat_shape<T>(m, n));
  kernels::active<T>().gemm_nt(m, n, k, a.value().data(), k, b.value().data(), k,
                               out.data(), n, false);
  return make_op<T>("matmul_nt", std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    const auto& kt = kernels::active<T>();
    const T* g = self.grad.data();
    if (auto* da = grad_in(self, 0))
      kt.gemm_nn(m, k, n, g, n, self.inputs[1]->value.data(), k, da->data(), k, true);
    if (auto* db = grad_in(self, 1))
      kt.gemm_tn(n, k, m, g, n, self.inputs[0]->value.data(), k, db->data(), k, true);
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor<T> out(mat_shape<T>(c, r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
  return make_op<T>("transpose", std::move(out), {a}, [r, c](Node<T>& self) {
    if (auto* da = grad_in(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*da)[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* d = grad_in(self, k))
        for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
    if (auto* d = grad_in(self, 1))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] -= self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * bv[i];
    if (auto* d = grad_in(self, 1))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  const std::size_t r = a.rows(), c = a.cols();
  if (row.size() != c)
    throw DimensionError("add_row: row " + shape_str(row.shape()) +
                         " does not match columns of " + shape_str(a.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row.value()[j];
  return make_op<T>("add_row", std::move(out), {a, row}, [r, c](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
    if (auto* d = grad_in(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*d)[j] += self.grad[i * c + j];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_op<T>("scale", std::move(out), {a}, [s](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += s * self.grad[i];
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return make_op<T>("gelu", std::move(out), {a}, [](Node<T>& self) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    if (auto* d = grad_in(self, 0)) {
      const auto& x = self.inputs[0]->value;
      for (std::size_t i = 0; i < d->size(); ++i) {
        const T v = x[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        (*d)[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = std::exp(v);
  return make_op<T>("exp", std::move(out), {a}, [](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = std::log(v);
  return make_op<T>("log", std::move(out), {a}, [](Node<T>& self) {
    if (auto* d = grad_in(self, 0)) {
      const auto& x = self.inputs[0]->value;
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] / x[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a, int axis) {
  const auto L = axis_layout(a.value(), axis);
  Tensor<T> out(axis == 0 ? Shape{1, L.groups} : Shape{L.groups, 1});
  for (std::size_t g = 0; g < L.groups; ++g) {
    T s = 0;
    for (std::size_t i = 0; i < L.len; ++i)
      s += a.value()[g * L.group_stride + i * L.elem_stride];
    out[g] = s;
  }
  return make_op<T>("sum", std::move(out), {a}, [L](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t g = 0; g < L.groups; ++g)
        for (std::size_t i = 0; i < L.len; ++i)
          (*d)[g * L.group_stride + i * L.elem_stride] += self.grad[g];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a, int axis) {
  const auto L = axis_layout(a.value(), axis);
  return scale(sum(a, axis), T(1) / static_cast<T>(L.len));
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T s = 0;
  for (auto v : a.value().values()) s += v;
  Tensor<T> out(Shape{1}, {s});
  return make_op<T>("sum_all", std::move(out), {a}, [](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (auto& v : d->storage()) v += self.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

namespace {

template <typename T>
void check_temperature(const char* op, double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw ParameterError(std::string(op) + ": temperature must be positive, got " +
                         std::to_string(t));
}

// Number of unmasked entries in group g.
inline std::size_t visible_len(const AxisLayout& L, const SoftmaxOptions& opt,
                               std::size_t g) {
  if (!opt.causal) return L.len;
  return std::min(L.len, g + opt.causal_offset + 1);
}

}  // namespace

template <typename T>
Var<T> softmax(const Var<T>& x, const SoftmaxOptions& opt) {
  check_temperature<T>("softmax", opt.temperature);
  if (opt.causal && opt.axis != 1)
    throw ParameterError("softmax: causal masking needs axis 1");
  const auto L = axis_layout(x.value(), opt.axis);
  const T inv_t = T(1) / static_cast<T>(opt.temperature);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t g = 0; g < L.groups; ++g) {
    const std::size_t n = visible_len(L, opt, g);
    const std::size_t base = g * L.group_stride;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, xv[base + i * L.elem_stride]);
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = base + i * L.elem_stride;
      out[at] = std::exp((xv[at] - mx) * inv_t);
      s += out[at];
    }
    const T inv_s = T(1) / s;
    for (std::size_t i = 0; i < n; ++i) out[base + i * L.elem_stride] *= inv_s;
  }
  return make_op<T>("softmax", std::move(out), {x}, [L, opt, inv_t](Node<T>& self) {
    auto* d = grad_in(self, 0);
    if (!d) return;
    const auto& y = self.value;
    for (std::size_t g = 0; g < L.groups; ++g) {
      const std::size_t n = visible_len(L, opt, g);
      const std::size_t base = g * L.group_stride;
      T dotgy = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = base + i * L.elem_stride;
        dotgy += self.grad[at] * y[at];
      }
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = base + i * L.elem_stride;
        (*d)[at] += y[at] * (self.grad[at] - dotgy) * inv_t;
      }
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x, const SoftmaxOptions& opt) {
  check_temperature<T>("log_softmax", opt.temperature);
  if (opt.causal) throw ParameterError("log_softmax: causal masking is not supported");
  const auto L = axis_layout(x.value(), opt.axis);
  const T inv_t = T(1) / static_cast<T>(opt.temperature);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t g = 0; g < L.groups; ++g) {
    const std::size_t base = g * L.group_stride;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < L.len; ++i) mx = std::max(mx, xv[base + i * L.elem_stride]);
    T s = 0;
    for (std::size_t i = 0; i < L.len; ++i)
      s += std::exp((xv[base + i * L.elem_stride] - mx) * inv_t);
    const T lse = std::log(s);
    for (std::size_t i = 0; i < L.len; ++i) {
      const std::size_t at = base + i * L.elem_stride;
      out[at] = (xv[at] - mx) * inv_t - lse;
    }
  }
  return make_op<T>("log_softmax", std::move(out), {x}, [L, inv_t](Node<T>& self) {
    auto* d = grad_in(self, 0);
    if (!d) return;
    for (std::size_t g = 0; g < L.groups; ++g) {
      const std::size_t base = g * L.group_stride;
      T gsum = 0;
      for (std::size_t i = 0; i < L.len; ++i) gsum += self.grad[base + i * L.elem_stride];
      for (std::size_t i = 0; i < L.len; ++i) {
        const std::size_t at = base + i * L.elem_stride;
        (*d)[at] += (self.grad[at] - std::exp(self.value[at]) * gsum) * inv_t;
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c)
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last extent of " +
                         shape_str(x.shape()));
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(r);
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T dlt = xv[i * c + j] - mu;
      var += dlt * dlt;
    }
    var /= static_cast<T>(c);
    rstd[i] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xv[i * c + j] - mu) * rstd[i];
      xhat[i * c + j] = h;
      out[i * c + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  return make_op<T>(
      "layer_norm", std::move(out), {x, gain, bias},
      [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& gv = self.inputs[1]->value;
        auto* dx = grad_in(self, 0);
        auto* dg = grad_in(self, 1);
        auto* db = grad_in(self, 2);
        std::vector<T> dh(c);
        for (std::size_t i = 0; i < r; ++i) {
          const T* g = self.grad.data() + i * c;
          const T* h = xhat.data() + i * c;
          if (dg)
            for (std::size_t j = 0; j < c; ++j) (*dg)[j] += g[j] * h[j];
          if (db)
            for (std::size_t j = 0; j < c; ++j) (*db)[j] += g[j];
          if (!dx) continue;
          T mean_dh = 0, mean_dhh = 0;
          for (std::size_t j = 0; j < c; ++j) {
            dh[j] = g[j] * gv[j];
            mean_dh += dh[j];
            mean_dhh += dh[j] * h[j];
          }
          mean_dh /= static_cast<T>(c);
          mean_dhh /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j)
            (*dx)[i * c + j] += rstd[i] * (dh[j] - mean_dh - h[j] * mean_dhh);
        }
      });
}

template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<std::int32_t>& ids) {
  const std::size_t k = table.rows(), d = table.cols();
  if (ids.empty()) throw ContractError("embedding: empty id list");
  Tensor<T> out(mat_shape<T>(ids.size(), d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= k)
      throw ContractError("embedding: id " + std::to_string(ids[i]) +
                          " outside table of " + std::to_string(k) + " rows");
    std::copy_n(table.value().data() + ids[i] * d, d, out.data() + i * d);
  }
  return make_op<T>("embedding", std::move(out), {table}, [ids, d](Node<T>& self) {
    if (auto* dt = grad_in(self, 0))
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) (*dt)[ids[i] * d + j] += self.grad[i * d + j];
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int32_t>& targets) {
  const std::size_t r = logits.rows(), k = logits.cols();
  if (targets.size() != r)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(r) + " rows");
  Tensor<T> probs(logits.shape());
  T total = 0;
  const T* x = logits.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k)
      throw ContractError("cross_entropy: target " + std::to_string(targets[i]) +
                          " outside " + std::to_string(k) + " classes");
    T mx = x[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[i * k + j]);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(x[i * k + j] - mx);
      s += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= s;
    total += std::log(s) + mx - x[i * k + targets[i]];
  }
  Tensor<T> out(Shape{1}, {total / static_cast<T>(r)});
  return make_op<T>(
      "cross_entropy", std::move(out), {logits},
      [r, k, targets, probs = std::move(probs)](Node<T>& self) {
        auto* d = grad_in(self, 0);
        if (!d) return;
        const T g = self.grad[0] / static_cast<T>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < k; ++j) (*d)[i * k + j] += g * probs[i * k + j];
          (*d)[i * k + targets[i]] -= g;
        }
      });
}

template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& target, int axis,
                          double temperature) {
  check_temperature<T>("soft_cross_entropy", temperature);
  if (target.shape() != logits.shape())
    throw DimensionError("soft_cross_entropy: target " + shape_str(target.shape()) +
                         " vs logits " + shape_str(logits.shape()));
  const auto L = axis_layout(logits.value(), axis);
  const T inv_t = T(1) / static_cast<T>(temperature);
  Tensor<T> q(logits.shape());
  std::vector<T> mass(L.groups);
  T total = 0;
  const T* x = logits.value().data();
  for (std::size_t g = 0; g < L.groups; ++g) {
    const std::size_t base = g * L.group_stride;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < L.len; ++i) mx = std::max(mx, x[base + i * L.elem_stride]);
    T s = 0;
    for (std::size_t i = 0; i < L.len; ++i) {
      const std::size_t at = base + i * L.elem_stride;
      q[at] = std::exp((x[at] - mx) * inv_t);
      s += q[at];
    }
    const T lse = std::log(s);
    for (std::size_t i = 0; i < L.len; ++i) {
      const std::size_t at = base + i * L.elem_stride;
      q[at] /= s;
      const T p = target[at];
      mass[g] += p;
      if (p != T(0)) total -= p * ((x[at] - mx) * inv_t - lse);
    }
  }
  Tensor<T> out(Shape{1}, {total / static_cast<T>(L.groups)});
  return make_op<T>(
      "soft_cross_entropy", std::move(out), {logits},
      [L, inv_t, target, q = std::move(q), mass = std::move(mass)](Node<T>& self) {
        auto* d = grad_in(self, 0);
        if (!d) return;
        const T g = self.grad[0] * inv_t / static_cast<T>(L.groups);
        for (std::size_t grp = 0; grp < L.groups; ++grp)
          for (std::size_t i = 0; i < L.len; ++i) {
            const std::size_t at = grp * L.group_stride + i * L.elem_stride;
            (*d)[at] += g * (q[at] * mass[grp] - target[at]);
          }
      });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  auto v = constant(x.value());
  v.node()->op = "detach";
  return v;
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_op<T>("reshape", std::move(out), {a}, [](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t len) {
  const std::size_t r = a.rows(), c = a.cols();
  if (len == 0 || start + len > c)
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside " + shape_str(a.shape()));
  Tensor<T> out(mat_shape<T>(r, len));
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.value().data() + i * c + start, len, out.data() + i * len);
  return make_op<T>("slice_cols", std::move(out), {a}, [r, c, start, len](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j)
          (*d)[i * c + start + j] += self.grad[i * len + j];
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    widths.push_back(p.cols());
    c += p.cols();
  }
  Tensor<T> out(mat_shape<T>(r, c));
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.value().data() + i * w, w, out.data() + i * c + off);
    off += w;
  }
  return make_op<T>("concat_cols", std::move(out), parts, [r, c, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k];
      if (auto* d = grad_in(self, k))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) (*d)[i * w + j] += self.grad[i * c + off + j];
      off += w;
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw DimensionError("concat_rows: column counts differ, " +
                           shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    sizes.push_back(p.size());
    r += p.rows();
  }
  Tensor<T> out(mat_shape<T>(r, c));
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.size(), out.data() + off);
    off += p.size();
  }
  return make_op<T>("concat_rows", std::move(out), parts, [sizes](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (auto* d = grad_in(self, k))
        for (std::size_t i = 0; i < sizes[k]; ++i) (*d)[i] += self.grad[off + i];
      off += sizes[k];
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<std::size_t>& rows) {
  const std::size_t r = a.rows(), c = a.cols();
  if (rows.empty()) throw ContractError("gather_rows: empty index list");
  Tensor<T> out(mat_shape<T>(rows.size(), c));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r)
      throw ContractError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                          shape_str(a.shape()));
    std::copy_n(a.value().data() + rows[i] * c, c, out.data() + i * c);
  }
  return make_op<T>("gather_rows", std::move(out), {a}, [rows, c](Node<T>& self) {
    if (auto* d = grad_in(self, 0))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) (*d)[rows[i] * c + j] += self.grad[i * c + j];
  });
}

template <typename T>
Var<T> rotate_pairs(const Var<T>& x, const Tensor<T>& cos_t, const Tensor<T>& sin_t) {
  const std::size_t r = x.rows(), c = x.cols();
  if (c % 2 != 0) throw DimensionError("rotate_pairs: odd width " + shape_str(x.shape()));
  const std::size_t h = c / 2;
  if (cos_t.rows() != r || cos_t.cols() != h || sin_t.shape() != cos_t.shape())
    throw DimensionError("rotate_pairs: angle tables " + shape_str(cos_t.shape()) +
                         " do not fit " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t p = 0; p < h; ++p) {
      const T cs = cos_t[i * h + p], sn = sin_t[i * h + p];
      const T x0 = xv[i * c + 2 * p], x1 = xv[i * c + 2 * p + 1];
      out[i * c + 2 * p] = cs * x0 - sn * x1;
      out[i * c + 2 * p + 1] = sn * x0 + cs * x1;
    }
  return make_op<T>("rotate_pairs", std::move(out), {x}, [r, c, h, cos_t, sin_t](Node<T>& self) {
    auto* d = grad_in(self, 0);
    if (!d) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t p = 0; p < h; ++p) {
        const T cs = cos_t[i * h + p], sn = sin_t[i * h + p];
        const T g0 = self.grad[i * c + 2 * p], g1 = self.grad[i * c + 2 * p + 1];
        (*d)[i * c + 2 * p] += cs * g0 + sn * g1;
        (*d)[i * c + 2 * p + 1] += -sn * g0 + cs * g1;
      }
  });
}

#define VLCP_INSTANTIATE(T)                                                          \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                           \
  template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> transpose<T>(const Var<T>&);                                       \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> scale<T>(const Var<T>&, T);                                        \
  template Var<T> gelu<T>(const Var<T>&);                                            \
  template Var<T> exp<T>(const Var<T>&);                                             \
  template Var<T> log<T>(const Var<T>&);                                             \
  template Var<T> sum<T>(const Var<T>&, int);                                        \
  template Var<T> mean<T>(const Var<T>&, int);                                       \
  template Var<T> sum_all<T>(const Var<T>&);                                         \
  template Var<T> mean_all<T>(const Var<T>&);                                        \
  template Var<T> softmax<T>(const Var<T>&, const SoftmaxOptions&);                  \
  template Var<T> log_softmax<T>(const Var<T>&, const SoftmaxOptions&);              \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, double); \
  template Var<T> embedding<T>(const Var<T>&, const std::vector<std::int32_t>&);     \
  template Var<T> cross_entropy<T>(const Var<T>&, const std::vector<std::int32_t>&); \
  template Var<T> soft_cross_entropy<T>(const Var<T>&, const Tensor<T>&, int, double); \
  template Var<T> detach<T>(const Var<T>&);                                          \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                  \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);            \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                        \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                        \
  template Var<T> gather_rows<T>(const Var<T>&, const std::vector<std::size_t>&);    \
  template Var<T> rotate_pairs<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);

VLCP_INSTANTIATE(float)
VLCP_INSTANTIATE(double)
#undef VLCP_INSTANTIATE

}  // namespace vlcp::ad
