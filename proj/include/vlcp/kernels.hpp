#pragma once

// Dense inner loops used by the autodiff ops. Each kernel has a portable
// scalar reference and an AVX2+FMA variant; the variant is picked once at
// startup from CPUID and can be pinned with VLCP_ISA=scalar|avx2.
//
// All matrices are row-major with explicit leading dimensions.

#include <cstddef>
#include <string_view>

namespace vlcp::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
// Pins the dispatch table. Throws ParameterError if the CPU lacks the ISA.
void set_isa(Isa isa);

template <typename T>
struct Table {
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool accumulate);
  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool accumulate);
  // C[m x n] (+)= A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc, bool accumulate);
};

template <typename T>
const Table<T>& table(Isa isa);

template <typename T>
const Table<T>& active();

namespace scalar {
template <typename T>
const Table<T>& table();
}
namespace avx2 {
template <typename T>
const Table<T>& table();
}

}  // namespace vlcp::kernels
