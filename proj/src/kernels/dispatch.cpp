#include <atomic>
#include <cstdlib>
#include <string>

#include "vlcp/error.hpp"
#include "vlcp/kernels.hpp"

namespace vlcp::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(VLCP_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("VLCP_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && cpu_has_avx2()) return Isa::avx2;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

bool isa_supported(Isa isa) {
  return isa == Isa::scalar || cpu_has_avx2();
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa))
    throw ParameterError("kernel ISA '" + std::string(isa_name(isa)) +
                         "' is not supported on this CPU");
  current().store(isa, std::memory_order_relaxed);
}

template <typename T>
const Table<T>& table(Isa isa) {
  if (isa == Isa::avx2) {
#if defined(VLCP_HAVE_AVX2)
    return avx2::table<T>();
#else
    throw ParameterError("built without AVX2 kernels");
#endif
  }
  return scalar::table<T>();
}

template <typename T>
const Table<T>& active() {
  return table<T>(active_isa());
}

template const Table<float>& table<float>(Isa);
template const Table<double>& table<double>(Isa);
template const Table<float>& active<float>();
template const Table<double>& active<double>();

}  // namespace vlcp::kernels
