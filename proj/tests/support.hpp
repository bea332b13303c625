#pragma once

// Independent double-precision oracles shared by the unit tests and the
// acceptance binary. Nothing here calls into the library's forward passes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "baangp/field.hpp"
#include "baangp/geometry.hpp"
#include "baangp/hashgrid.hpp"
#include "baangp/renderer.hpp"
#include "baangp/tape.hpp"

namespace testsupport {

// |a - b| <= tol * max(|a|, |b|, floor)
inline bool rel_close(double a, double b, double tol, double floor = 1e-3) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), floor});
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// --- hash encoding --------------------------------------------------------

inline std::uint32_t oracle_hash(std::span<const std::uint32_t> v, std::uint32_t table_size) {
  static const std::uint64_t primes[4] = {1ull, 2654435761ull, 805459861ull, 2097192405ull};
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < v.size(); ++i) h ^= (std::uint64_t(v[i]) * primes[i]) & 0xffffffffull;
  return std::uint32_t(h % table_size);
}

inline std::uint32_t oracle_row(const baangp::HashGrid& g, int level, std::span<const std::uint32_t> v) {
  const auto& cfg = g.config();
  const std::uint64_t side = std::uint64_t(g.resolutions()[std::size_t(level)]) + 1;
  std::uint64_t count = 1;
  for (int i = 0; i < cfg.dim; ++i) count *= side;
  if (count <= cfg.table_size) {
    // row-major, last axis fastest
    std::uint64_t idx = 0;
    for (int i = 0; i < cfg.dim; ++i) idx = idx * side + v[std::size_t(i)];
    return std::uint32_t(idx);
  }
  return oracle_hash(v, cfg.table_size);
}

// Brute-force d-linear interpolation over all 2^d corners in double, reading
// tables from `params` (same layout as HashGrid::params()).
inline std::vector<double> oracle_encode(const baangp::HashGrid& g, std::span<const double> params,
                                         std::span<const double> x) {
  const auto& cfg = g.config();
  std::vector<double> out(std::size_t(cfg.levels * cfg.features), 0.0);
  for (int l = 0; l < cfg.levels; ++l) {
    const double n = g.resolutions()[std::size_t(l)];
    std::uint32_t base[4];
    double w[4];
    for (int i = 0; i < cfg.dim; ++i) {
      const double s = x[std::size_t(i)] * n;
      double f = std::floor(s);
      if (f >= n) f = n - 1; // x == 1 sits in the last cell
      base[i] = std::uint32_t(f);
      w[i] = s - f;
    }
    for (int corner = 0; corner < (1 << cfg.dim); ++corner) {
      std::uint32_t v[4];
      double weight = 1.0;
      for (int i = 0; i < cfg.dim; ++i) {
        const int bit = (corner >> i) & 1;
        v[i] = base[i] + std::uint32_t(bit);
        weight *= bit ? w[i] : 1.0 - w[i];
      }
      const std::uint32_t row = oracle_row(g, l, std::span<const std::uint32_t>(v, std::size_t(cfg.dim)));
      const std::size_t off = (std::size_t(l) * cfg.table_size + row) * std::size_t(cfg.features);
      for (int f = 0; f < cfg.features; ++f) out[std::size_t(l * cfg.features + f)] += weight * params[off + std::size_t(f)];
    }
  }
  return out;
}

// --- compositing ------------------------------------------------------------

struct OracleComposite {
  double rgb[3];
  double opacity;
};

inline OracleComposite oracle_composite(std::span<const double> sigma, std::span<const double> rgb,
                                        std::span<const double> delta, const double background[3]) {
  OracleComposite r{{0, 0, 0}, 0};
  double optical = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double t = std::exp(-optical);
    const double a = 1.0 - std::exp(-sigma[i] * delta[i]);
    for (int c = 0; c < 3; ++c) r.rgb[c] += t * a * rgb[i * 3 + std::size_t(c)];
    r.opacity += t * a;
    optical += sigma[i] * delta[i];
  }
  const double t_end = std::exp(-optical);
  for (int c = 0; c < 3; ++c) r.rgb[c] += t_end * background[c];
  return r;
}

// --- MLP on the tape -------------------------------------------------------

// Replays baangp::Mlp (ReLU hidden layers, linear output, input-major weights)
// on a double tape. Returns output node indices; `param_nodes` receives one
// variable per parameter.
inline std::vector<baangp::Tape::Index> tape_mlp(baangp::Tape& t, const std::vector<int>& widths,
                                                 std::span<const double> params, std::span<const double> x,
                                                 std::vector<baangp::Tape::Index>& param_nodes) {
  param_nodes.clear();
  for (double p : params) param_nodes.push_back(t.variable(p));
  std::vector<baangp::Tape::Index> act;
  for (double v : x) act.push_back(t.variable(v));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = std::size_t(widths[l]);
    const std::size_t out = std::size_t(widths[l + 1]);
    // matvec wants out x in, row-major
    std::vector<baangp::Tape::Index> m(out * in);
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t o = 0; o < out; ++o) m[o * in + i] = param_nodes[off + i * out + o];
    off += in * out;
    std::vector<baangp::Tape::Index> bias(param_nodes.begin() + std::ptrdiff_t(off),
                                          param_nodes.begin() + std::ptrdiff_t(off + out));
    off += out;
    act = t.matvec(m, act, out, in, bias);
    if (l + 2 < widths.size())
      for (auto& a : act) a = t.relu(a);
  }
  return act;
}

// Double-precision forward of baangp::Mlp for finite differences.
inline std::vector<double> oracle_mlp(const std::vector<int>& widths, std::span<const double> params,
                                      std::span<const double> x) {
  std::vector<double> act(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = std::size_t(widths[l]);
    const std::size_t out = std::size_t(widths[l + 1]);
    std::vector<double> y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = params[off + in * out + o];
      for (std::size_t i = 0; i < in; ++i) acc += act[i] * params[off + i * out + o];
      y[o] = (l + 2 < widths.size()) ? std::max(acc, 0.0) : acc;
    }
    off += in * out + out;
    act = std::move(y);
  }
  return act;
}

// --- rigid motion ---------------------------------------------------------

inline Eigen::Matrix3d oracle_rotation(const Eigen::Vector3d& omega) {
  const double th = omega.norm();
  if (th < 1e-12) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(th, omega / th).toRotationMatrix();
}

// exp of (omega, rho) through the 4x4 matrix exponential series.
inline baangp::Mat34 oracle_se3_exp(const baangp::Vec6& p) {
  Eigen::Matrix4d xi = Eigen::Matrix4d::Zero();
  xi(0, 1) = -p[2];
  xi(0, 2) = p[1];
  xi(1, 0) = p[2];
  xi(1, 2) = -p[0];
  xi(2, 0) = -p[1];
  xi(2, 1) = p[0];
  xi(0, 3) = p[3];
  xi(1, 3) = p[4];
  xi(2, 3) = p[5];
  // scaling and squaring
  int s = 0;
  double n = xi.norm();
  while (n > 0.5) {
    n *= 0.5;
    ++s;
  }
  const Eigen::Matrix4d a = xi / std::pow(2.0, s);
  Eigen::Matrix4d term = Eigen::Matrix4d::Identity(), sum = Eigen::Matrix4d::Identity();
  for (int k = 1; k < 30; ++k) {
    term = term * a / double(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum.topRows<3>();
}

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

} // namespace testsupport
