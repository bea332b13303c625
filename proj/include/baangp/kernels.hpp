#pragma once

// Dense-layer inner loops for the MLP decoders.
//
// Every kernel has a scalar reference implementation. An AVX2+FMA variant is
// compiled in on x86-64 and selected at runtime when the CPU supports it; the
// environment variable BAANGP_SIMD=scalar forces the reference path.
//
// Layouts are row-major. Weights are stored input-major ("wt", in x out) so a
// sample's output row is a sum of contiguous weight rows.

#include <cstddef>

namespace baangp::simd {

struct DenseKernels {
  const char* name;
  // y[r][o] = bias[o] + sum_i x[r][i] * wt[i][o]
  void (*forward)(const float* x, std::size_t rows, std::size_t in, const float* wt, const float* bias,
                  std::size_t out, float* y);
  // dx[r][i] = sum_o dy[r][o] * wt[i][o]
  void (*backward_input)(const float* dy, std::size_t rows, std::size_t out, const float* wt,
                         std::size_t in, float* dx);
  // dwt[i][o] += sum_r x[r][i] * dy[r][o];  dbias[o] += sum_r dy[r][o]
  void (*backward_params)(const float* dy, std::size_t rows, std::size_t out, const float* x,
                          std::size_t in, float* dwt, float* dbias);
  // y = max(y, 0) in place
  void (*relu)(float* y, std::size_t n);
  // dy *= (y > 0), y being the post-activation value
  void (*relu_backward)(const float* y, float* dy, std::size_t n);
};

const DenseKernels& scalar_kernels();
// nullptr when the build has no AVX2 variant or the CPU lacks AVX2/FMA.
const DenseKernels* avx2_kernels();
const DenseKernels& active_kernels();

bool cpu_supports_avx2_fma();

} // namespace baangp::simd
