#pragma once

// Forward-mode dual numbers. Used to get exact Jacobians of small closed-form
// maps (SE(3) / SL(3) exponentials, spherical harmonics) without hand-expanding
// every partial derivative.

#include <array>
#include <cmath>
#include <cstddef>

namespace baangp {

template <std::size_t N, class T = double>
struct Dual {
  T v{};
  std::array<T, N> d{};

  Dual() = default;
  Dual(T value) : v(value) {} // NOLINT(google-explicit-constructor)

  static Dual seed(T value, std::size_t i) {
    Dual x(value);
    x.d[i] = T(1);
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (std::size_t i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (std::size_t i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (std::size_t i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const T inv = T(1) / o.v;
    for (std::size_t i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

template <std::size_t N, class T>
Dual<N, T> operator+(Dual<N, T> a, const Dual<N, T>& b) { return a += b; }
template <std::size_t N, class T>
Dual<N, T> operator-(Dual<N, T> a, const Dual<N, T>& b) { return a -= b; }
template <std::size_t N, class T>
Dual<N, T> operator*(Dual<N, T> a, const Dual<N, T>& b) { return a *= b; }
template <std::size_t N, class T>
Dual<N, T> operator/(Dual<N, T> a, const Dual<N, T>& b) { return a /= b; }

template <std::size_t N, class T>
Dual<N, T> operator+(Dual<N, T> a, T b) { a.v += b; return a; }
template <std::size_t N, class T>
Dual<N, T> operator+(T b, Dual<N, T> a) { a.v += b; return a; }
template <std::size_t N, class T>
Dual<N, T> operator-(Dual<N, T> a, T b) { a.v -= b; return a; }
template <std::size_t N, class T>
Dual<N, T> operator-(T b, const Dual<N, T>& a) { return Dual<N, T>(b) - a; }
template <std::size_t N, class T>
Dual<N, T> operator*(Dual<N, T> a, T b) {
  a.v *= b;
  for (auto& x : a.d) x *= b;
  return a;
}
template <std::size_t N, class T>
Dual<N, T> operator*(T b, Dual<N, T> a) { return a * b; }
template <std::size_t N, class T>
Dual<N, T> operator/(Dual<N, T> a, T b) { return a * (T(1) / b); }
template <std::size_t N, class T>
Dual<N, T> operator-(Dual<N, T> a) {
  a.v = -a.v;
  for (auto& x : a.d) x = -x;
  return a;
}

template <std::size_t N, class T>
Dual<N, T> sin(const Dual<N, T>& a) {
  Dual<N, T> r(std::sin(a.v));
  const T c = std::cos(a.v);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = c * a.d[i];
  return r;
}
template <std::size_t N, class T>
Dual<N, T> cos(const Dual<N, T>& a) {
  Dual<N, T> r(std::cos(a.v));
  const T s = -std::sin(a.v);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = s * a.d[i];
  return r;
}
template <std::size_t N, class T>
Dual<N, T> sqrt(const Dual<N, T>& a) {
  Dual<N, T> r(std::sqrt(a.v));
  const T k = T(0.5) / r.v;
  for (std::size_t i = 0; i < N; ++i) r.d[i] = k * a.d[i];
  return r;
}
template <std::size_t N, class T>
Dual<N, T> exp(const Dual<N, T>& a) {
  Dual<N, T> r(std::exp(a.v));
  for (std::size_t i = 0; i < N; ++i) r.d[i] = r.v * a.d[i];
  return r;
}

// Scalar helpers so templated code can call value() on plain doubles too.
inline double value_of(double x) { return x; }
inline float value_of(float x) { return x; }
template <std::size_t N, class T>
T value_of(const Dual<N, T>& x) { return x.v; }

} // namespace baangp
