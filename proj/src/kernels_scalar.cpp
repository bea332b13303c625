#include "baangp/kernels.hpp"

#include <algorithm>

namespace baangp::simd {
namespace {

void forward(const float* x, std::size_t rows, std::size_t in, const float* wt, const float* bias,
             std::size_t out, float* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    float* yr = y + r * out;
    const float* xr = x + r * in;
    for (std::size_t o = 0; o < out; ++o) yr[o] = bias ? bias[o] : 0.0f;
    for (std::size_t i = 0; i < in; ++i) {
      const float xi = xr[i];
      if (xi == 0.0f) continue;
      const float* w = wt + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * w[o];
    }
  }
}

void backward_input(const float* dy, std::size_t rows, std::size_t out, const float* wt, std::size_t in,
                    float* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* g = dy + r * out;
    float* dxr = dx + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const float* w = wt + i * out;
      float acc = 0.0f;
      for (std::size_t o = 0; o < out; ++o) acc += g[o] * w[o];
      dxr[i] = acc;
    }
  }
}

void backward_params(const float* dy, std::size_t rows, std::size_t out, const float* x, std::size_t in,
                     float* dwt, float* dbias) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* g = dy + r * out;
    const float* xr = x + r * in;
    if (dbias) {
      for (std::size_t o = 0; o < out; ++o) dbias[o] += g[o];
    }
    for (std::size_t i = 0; i < in; ++i) {
      const float xi = xr[i];
      if (xi == 0.0f) continue;
      float* dw = dwt + i * out;
      for (std::size_t o = 0; o < out; ++o) dw[o] += xi * g[o];
    }
  }
}

void relu(float* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] = std::max(y[k], 0.0f);
}

void relu_backward(const float* y, float* dy, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    if (!(y[k] > 0.0f)) dy[k] = 0.0f;
  }
}

} // namespace

const DenseKernels& scalar_kernels() {
  static const DenseKernels k{"scalar", forward, backward_input, backward_params, relu, relu_backward};
  return k;
}

} // namespace baangp::simd
