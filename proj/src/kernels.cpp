#include "baangp/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace baangp::simd {

#if defined(BAANGP_HAVE_AVX2)
const DenseKernels& avx2_kernels_impl();
#endif

bool cpu_supports_avx2_fma() {
#if defined(BAANGP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const DenseKernels* avx2_kernels() {
#if defined(BAANGP_HAVE_AVX2)
  static const bool ok = cpu_supports_avx2_fma();
  return ok ? &avx2_kernels_impl() : nullptr;
#else
  return nullptr;
#endif
}

const DenseKernels& active_kernels() {
  static const DenseKernels* chosen = [] {
    const char* env = std::getenv("BAANGP_SIMD");
    if (env && std::strcmp(env, "scalar") == 0) return &scalar_kernels();
    if (const DenseKernels* k = avx2_kernels()) return k;
    return &scalar_kernels();
  }();
  return *chosen;
}

} // namespace baangp::simd
