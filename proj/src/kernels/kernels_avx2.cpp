// Compiled with -mavx2 -mfma. Only reached through the dispatch table after
// a CPUID check, so nothing here may be called from generic code.

#include <immintrin.h>

#include "vlcp/kernels.hpp"

namespace vlcp::kernels::avx2 {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t width = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V bcast(T x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t width = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V bcast(T x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

template <typename S>
typename S::T dot(const typename S::T* a, const typename S::T* b,
                  std::size_t n) {
  constexpr std::size_t w = S::width;
  typename S::V acc0 = S::zero(), acc1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    acc0 = S::fma(S::load(a + i), S::load(b + i), acc0);
    acc1 = S::fma(S::load(a + i + w), S::load(b + i + w), acc1);
  }
  for (; i + w <= n; i += w) acc0 = S::fma(S::load(a + i), S::load(b + i), acc0);
  typename S::T s = S::hsum(S::add(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename S>
void axpy(typename S::T alpha, const typename S::T* x, typename S::T* y,
          std::size_t n) {
  constexpr std::size_t w = S::width;
  const auto va = S::bcast(alpha);
  std::size_t i = 0;
  for (; i + w <= n; i += w) S::store(y + i, S::fma(va, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C[i, :] (+)= sum_p A(i, p) * B[p, :], where A(i, p) = a[i*a_row + p*a_col].
// Covers both A and A^T by choosing the strides.
template <typename S>
void gemm_rows(std::size_t m, std::size_t n, std::size_t k,
               const typename S::T* a, std::size_t a_row, std::size_t a_col,
               const typename S::T* b, std::size_t ldb, typename S::T* c,
               std::size_t ldc, bool accumulate) {
  using T = typename S::T;
  constexpr std::size_t w = S::width;
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    const T* arow = a + i * a_row;
    std::size_t j = 0;
    for (; j + 4 * w <= n; j += 4 * w) {
      auto c0 = accumulate ? S::load(crow + j) : S::zero();
      auto c1 = accumulate ? S::load(crow + j + w) : S::zero();
      auto c2 = accumulate ? S::load(crow + j + 2 * w) : S::zero();
      auto c3 = accumulate ? S::load(crow + j + 3 * w) : S::zero();
      for (std::size_t p = 0; p < k; ++p) {
        const auto av = S::bcast(arow[p * a_col]);
        const T* bp = b + p * ldb + j;
        c0 = S::fma(av, S::load(bp), c0);
        c1 = S::fma(av, S::load(bp + w), c1);
        c2 = S::fma(av, S::load(bp + 2 * w), c2);
        c3 = S::fma(av, S::load(bp + 3 * w), c3);
      }
      S::store(crow + j, c0);
      S::store(crow + j + w, c1);
      S::store(crow + j + 2 * w, c2);
      S::store(crow + j + 3 * w, c3);
    }
    for (; j + w <= n; j += w) {
      auto c0 = accumulate ? S::load(crow + j) : S::zero();
      for (std::size_t p = 0; p < k; ++p)
        c0 = S::fma(S::bcast(arow[p * a_col]), S::load(b + p * ldb + j), c0);
      S::store(crow + j, c0);
    }
    for (; j < n; ++j) {
      T s = accumulate ? crow[j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += arow[p * a_col] * b[p * ldb + j];
      crow[j] = s;
    }
  }
}

template <typename S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const typename S::T* a, std::size_t lda, const typename S::T* b,
             std::size_t ldb, typename S::T* c, std::size_t ldc,
             bool accumulate) {
  gemm_rows<S>(m, n, k, a, lda, 1, b, ldb, c, ldc, accumulate);
}

template <typename S>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const typename S::T* a, std::size_t lda, const typename S::T* b,
             std::size_t ldb, typename S::T* c, std::size_t ldc,
             bool accumulate) {
  gemm_rows<S>(m, n, k, a, 1, lda, b, ldb, c, ldc, accumulate);
}

template <typename S>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const typename S::T* a, std::size_t lda, const typename S::T* b,
             std::size_t ldb, typename S::T* c, std::size_t ldc,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto s = dot<S>(a + i * lda, b + j * ldb, k);
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + s : s;
    }
}

template <typename S>
const Table<typename S::T>& make() {
  static const Table<typename S::T> t{&dot<S>, &axpy<S>, &gemm_nn<S>,
                                      &gemm_nt<S>, &gemm_tn<S>};
  return t;
}

}  // namespace

template <>
const Table<float>& table<float>() {
  return make<F32>();
}
template <>
const Table<double>& table<double>() {
  return make<F64>();
}

}  // namespace vlcp::kernels::avx2
