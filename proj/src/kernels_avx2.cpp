// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include "baangp/kernels.hpp"

#include <immintrin.h>

#include <algorithm>

namespace baangp::simd {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

void forward(const float* x, std::size_t rows, std::size_t in, const float* wt, const float* bias,
             std::size_t out, float* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x + r * in;
    float* yr = y + r * out;
    std::size_t o = 0;
    for (; o + 32 <= out; o += 32) {
      __m256 a0, a1, a2, a3;
      if (bias) {
        a0 = _mm256_loadu_ps(bias + o);
        a1 = _mm256_loadu_ps(bias + o + 8);
        a2 = _mm256_loadu_ps(bias + o + 16);
        a3 = _mm256_loadu_ps(bias + o + 24);
      } else {
        a0 = a1 = a2 = a3 = _mm256_setzero_ps();
      }
      for (std::size_t i = 0; i < in; ++i) {
        const __m256 xi = _mm256_broadcast_ss(xr + i);
        const float* w = wt + i * out + o;
        a0 = _mm256_fmadd_ps(xi, _mm256_loadu_ps(w), a0);
        a1 = _mm256_fmadd_ps(xi, _mm256_loadu_ps(w + 8), a1);
        a2 = _mm256_fmadd_ps(xi, _mm256_loadu_ps(w + 16), a2);
        a3 = _mm256_fmadd_ps(xi, _mm256_loadu_ps(w + 24), a3);
      }
      _mm256_storeu_ps(yr + o, a0);
      _mm256_storeu_ps(yr + o + 8, a1);
      _mm256_storeu_ps(yr + o + 16, a2);
      _mm256_storeu_ps(yr + o + 24, a3);
    }
    for (; o + 8 <= out; o += 8) {
      __m256 a = bias ? _mm256_loadu_ps(bias + o) : _mm256_setzero_ps();
      for (std::size_t i = 0; i < in; ++i) {
        a = _mm256_fmadd_ps(_mm256_broadcast_ss(xr + i), _mm256_loadu_ps(wt + i * out + o), a);
      }
      _mm256_storeu_ps(yr + o, a);
    }
    for (; o < out; ++o) {
      float a = bias ? bias[o] : 0.0f;
      for (std::size_t i = 0; i < in; ++i) a += xr[i] * wt[i * out + o];
      yr[o] = a;
    }
  }
}

void backward_input(const float* dy, std::size_t rows, std::size_t out, const float* wt, std::size_t in,
                    float* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* g = dy + r * out;
    float* dxr = dx + r * in;
    std::size_t i = 0;
    for (; i + 4 <= in; i += 4) {
      const float* w0 = wt + i * out;
      const float* w1 = w0 + out;
      const float* w2 = w1 + out;
      const float* w3 = w2 + out;
      __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps();
      __m256 a2 = _mm256_setzero_ps(), a3 = _mm256_setzero_ps();
      std::size_t o = 0;
      for (; o + 8 <= out; o += 8) {
        const __m256 gv = _mm256_loadu_ps(g + o);
        a0 = _mm256_fmadd_ps(gv, _mm256_loadu_ps(w0 + o), a0);
        a1 = _mm256_fmadd_ps(gv, _mm256_loadu_ps(w1 + o), a1);
        a2 = _mm256_fmadd_ps(gv, _mm256_loadu_ps(w2 + o), a2);
        a3 = _mm256_fmadd_ps(gv, _mm256_loadu_ps(w3 + o), a3);
      }
      float s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
      for (; o < out; ++o) {
        s0 += g[o] * w0[o];
        s1 += g[o] * w1[o];
        s2 += g[o] * w2[o];
        s3 += g[o] * w3[o];
      }
      dxr[i] = s0;
      dxr[i + 1] = s1;
      dxr[i + 2] = s2;
      dxr[i + 3] = s3;
    }
    for (; i < in; ++i) {
      const float* w = wt + i * out;
      __m256 a = _mm256_setzero_ps();
      std::size_t o = 0;
      for (; o + 8 <= out; o += 8) a = _mm256_fmadd_ps(_mm256_loadu_ps(g + o), _mm256_loadu_ps(w + o), a);
      float s = hsum(a);
      for (; o < out; ++o) s += g[o] * w[o];
      dxr[i] = s;
    }
  }
}

void backward_params(const float* dy, std::size_t rows, std::size_t out, const float* x, std::size_t in,
                     float* dwt, float* dbias) {
  if (dbias) {
    for (std::size_t r = 0; r < rows; ++r) {
      const float* g = dy + r * out;
      std::size_t o = 0;
      for (; o + 8 <= out; o += 8) {
        _mm256_storeu_ps(dbias + o, _mm256_add_ps(_mm256_loadu_ps(dbias + o), _mm256_loadu_ps(g + o)));
      }
      for (; o < out; ++o) dbias[o] += g[o];
    }
  }
  // Four rows per pass so each weight-gradient row is loaded and stored once per block.
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const float* g0 = dy + r * out;
    const float* g1 = g0 + out;
    const float* g2 = g1 + out;
    const float* g3 = g2 + out;
    const float* x0 = x + r * in;
    const float* x1 = x0 + in;
    const float* x2 = x1 + in;
    const float* x3 = x2 + in;
    for (std::size_t i = 0; i < in; ++i) {
      const __m256 b0 = _mm256_set1_ps(x0[i]);
      const __m256 b1 = _mm256_set1_ps(x1[i]);
      const __m256 b2 = _mm256_set1_ps(x2[i]);
      const __m256 b3 = _mm256_set1_ps(x3[i]);
      float* dw = dwt + i * out;
      std::size_t o = 0;
      for (; o + 8 <= out; o += 8) {
        __m256 acc = _mm256_loadu_ps(dw + o);
        acc = _mm256_fmadd_ps(b0, _mm256_loadu_ps(g0 + o), acc);
        acc = _mm256_fmadd_ps(b1, _mm256_loadu_ps(g1 + o), acc);
        acc = _mm256_fmadd_ps(b2, _mm256_loadu_ps(g2 + o), acc);
        acc = _mm256_fmadd_ps(b3, _mm256_loadu_ps(g3 + o), acc);
        _mm256_storeu_ps(dw + o, acc);
      }
      for (; o < out; ++o) {
        dw[o] += x0[i] * g0[o] + x1[i] * g1[o] + x2[i] * g2[o] + x3[i] * g3[o];
      }
    }
  }
  for (; r < rows; ++r) {
    const float* g = dy + r * out;
    const float* xr = x + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const __m256 b = _mm256_set1_ps(xr[i]);
      float* dw = dwt + i * out;
      std::size_t o = 0;
      for (; o + 8 <= out; o += 8) {
        _mm256_storeu_ps(dw + o, _mm256_fmadd_ps(b, _mm256_loadu_ps(g + o), _mm256_loadu_ps(dw + o)));
      }
      for (; o < out; ++o) dw[o] += xr[i] * g[o];
    }
  }
}

void relu(float* y, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) _mm256_storeu_ps(y + k, _mm256_max_ps(_mm256_loadu_ps(y + k), zero));
  for (; k < n; ++k) y[k] = std::max(y[k], 0.0f);
}

void relu_backward(const float* y, float* dy, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(y + k), zero, _CMP_GT_OQ);
    _mm256_storeu_ps(dy + k, _mm256_and_ps(mask, _mm256_loadu_ps(dy + k)));
  }
  for (; k < n; ++k) {
    if (!(y[k] > 0.0f)) dy[k] = 0.0f;
  }
}

} // namespace

const DenseKernels& avx2_kernels_impl() {
  static const DenseKernels k{"avx2", forward, backward_input, backward_params, relu, relu_backward};
  return k;
}

} // namespace baangp::simd
