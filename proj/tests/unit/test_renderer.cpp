#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "baangp/error.hpp"
#include "baangp/renderer.hpp"
#include "../support.hpp"

using namespace baangp;
using testsupport::rel_close;

namespace {

RadianceModel small_model(std::uint64_t seed, bool unbounded = false) {
  RadianceModel m;
  const HashGridConfig g{3, 4, 1u << 10, 2, 4, 32};
  m.grid = HashGrid(g, seed, 1.0f);
  if (unbounded) {
    m.contraction.mode = ContractionMode::inverted_sphere;
    m.grid_far = HashGrid(HashGridConfig{4, 4, 1u << 10, 2, 4, 32}, seed + 1, 1.0f);
  }
  m.mlp = FieldMLP(FieldMlpConfig{8, 16, 7, 16, 2}, seed);
  m.validate();
  return m;
}

Ray random_ray(std::mt19937_64& rng, float dist = 3.0f) {
  std::normal_distribution<float> n;
  Eigen::Vector3f o(n(rng), n(rng), n(rng));
  o = o.normalized() * dist;
  Eigen::Vector3f target(0.3f * n(rng), 0.3f * n(rng), 0.3f * n(rng));
  return Ray{o, (target - o).normalized()};
}

} // namespace

TEST_CASE("composite: limiting cases") {
  const Rgb bg{0.2f, 0.4f, 0.6f};
  const std::vector<float> zero(5, 0.0f), rgb(15, 0.9f), delta(5, 0.1f);
  const CompositeResult e = composite(zero, rgb, delta, bg);
  CHECK(e.opacity == 0.0f);
  for (int c = 0; c < 3; ++c) CHECK(e.rgb[std::size_t(c)] == doctest::Approx(bg[std::size_t(c)]));

  const std::vector<float> s = {1e6f}, c = {0.1f, 0.7f, 0.3f}, d = {1.0f};
  const CompositeResult o = composite(s, c, d, bg);
  CHECK(o.opacity == doctest::Approx(1.0));
  CHECK(o.rgb[1] == doctest::Approx(0.7));

  const std::vector<float> neg = {-1.0f};
  CHECK_THROWS_AS(composite(neg, c, d, bg), InvalidArgument);
  const std::vector<float> negd = {-0.1f};
  CHECK_THROWS_AS(composite(s, c, negd, bg), InvalidArgument);
}

TEST_CASE("composite: homogeneous medium") {
  for (double sigma : {0.5, 2.0, 7.0}) {
    for (int n : {16, 256, 1000}) {
      const double t = 1.3;
      const std::vector<float> s(static_cast<std::size_t>(n), float(sigma)), d(static_cast<std::size_t>(n), float(t / n)), c(static_cast<std::size_t>(n) * 3, 0.5f);
      const CompositeResult r = composite(s, c, d, Rgb{0, 0, 0});
      CHECK(std::abs(r.opacity - (1.0 - std::exp(-sigma * t))) < 1e-3);
    }
  }
}

TEST_CASE("composite: weights bounded and transmittance non-increasing") {
  std::mt19937_64 rng(1);
  std::exponential_distribution<float> ex(0.5f);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 64;
    std::vector<float> s(n), c(n * 3), d(n);
    for (auto& v : s) v = ex(rng);
    for (auto& v : c) v = u(rng);
    for (auto& v : d) v = 0.05f * u(rng);
    const CompositeResult r = composite(s, c, d, Rgb{1, 1, 1});
    CHECK(r.opacity >= 0.0f);
    CHECK(r.opacity <= 1.0f);
    // reproduce per-sample weights in double
    double trans = 1.0, sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 1.0 - std::exp(-double(s[i]) * d[i]);
      const double next = trans * (1.0 - a);
      CHECK(next <= trans);
      CHECK(a * trans >= 0.0);
      sum += a * trans;
      trans = next;
    }
    CHECK(sum <= 1.0 + 1e-12);
    CHECK(r.opacity == doctest::Approx(sum).epsilon(1e-5));
  }
}

TEST_CASE("composite: early termination") {
  const std::vector<float> s(100, 50.0f), c(300, 0.3f), d(100, 0.1f);
  const CompositeResult full = composite(s, c, d, Rgb{1, 1, 1});
  const CompositeResult cut = composite(s, c, d, Rgb{1, 1, 1}, 1e-4f);
  CHECK(full.used == 100);
  CHECK(cut.used < 10);
  CHECK(cut.rgb[0] == doctest::Approx(full.rgb[0]).epsilon(1e-3));
}

TEST_CASE("composite: backward matches finite differences of the double oracle") {
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> ex(1.0);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const double bgd[3] = {0.9, 0.5, 0.1};
  const Rgb bg{0.9f, 0.5f, 0.1f};
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng() % 20;
    std::vector<float> s(n), c(n * 3), d(n);
    for (auto& v : s) v = float(3.0 * ex(rng));
    for (auto& v : c) v = float(u(rng));
    for (auto& v : d) v = float(0.2 * u(rng));
    const Rgb g{float(u(rng) - 0.5), float(u(rng) - 0.5), float(u(rng) - 0.5)};
    const float go = float(u(rng) - 0.5);
    std::vector<float> ds(n), dc(n * 3), dd(n);
    composite_backward(s, c, d, bg, g, go, ds, dc, dd);

    std::vector<double> sd(s.begin(), s.end()), cd(c.begin(), c.end()), dl(d.begin(), d.end());
    const auto objective = [&](const std::vector<double>& S, const std::vector<double>& C, const std::vector<double>& D) {
      const auto r = testsupport::oracle_composite(S, C, D, bgd);
      return g[0] * r.rgb[0] + g[1] * r.rgb[1] + g[2] * r.rgb[2] + go * r.opacity;
    };
    for (std::size_t i = 0; i < n; ++i) {
      const double fs = testsupport::central_diff(
          [&](double v) {
            auto S = sd;
            S[i] = v;
            return objective(S, cd, dl);
          },
          sd[i], 1e-6);
      const double fdl = testsupport::central_diff(
          [&](double v) {
            auto D = dl;
            D[i] = v;
            return objective(sd, cd, D);
          },
          dl[i], 1e-7);
      const double fc = testsupport::central_diff(
          [&](double v) {
            auto C = cd;
            C[i * 3 + 1] = v;
            return objective(sd, C, dl);
          },
          cd[i * 3 + 1], 1e-6);
      CHECK(rel_close(ds[i], fs, 1e-3));
      CHECK(rel_close(dd[i], fdl, 1e-3));
      CHECK(rel_close(dc[i * 3 + 1], fc, 1e-3));
    }
  }
}

TEST_CASE("dynamic batch size") {
  CHECK(dynamic_batch_size(1024, 65536, 65536, 64, 1 << 16) == 1024);
  CHECK(dynamic_batch_size(1024, 2 * 65536, 65536, 64, 1 << 16) == 512);
  CHECK(dynamic_batch_size(1024, 10, 65536, 64, 4096) == 4096);
  CHECK(dynamic_batch_size(1024, 1 << 30, 65536, 64, 4096) == 64);
  CHECK(dynamic_batch_size(777, 0, 65536, 64, 4096) == 777);
}

TEST_CASE("aabb intersection and marching") {
  const Eigen::Vector3f lo(-1, -1, -1), hi(1, 1, 1);
  Ray r{Eigen::Vector3f(-3, 0.1f, 0.2f), Eigen::Vector3f(1, 0, 0)};
  float tn, tf;
  int axis;
  REQUIRE(intersect_aabb(r, lo, hi, tn, tf, &axis));
  CHECK(tn == doctest::Approx(2.0));
  CHECK(tf == doctest::Approx(4.0));
  CHECK(axis == 0);
  Ray inside{Eigen::Vector3f(0, 0, 0), Eigen::Vector3f(0, 1, 0)};
  REQUIRE(intersect_aabb(inside, lo, hi, tn, tf, &axis));
  CHECK(axis == -1);
  Ray behind{Eigen::Vector3f(3, 0, 0), Eigen::Vector3f(1, 0, 0)};
  CHECK_FALSE(intersect_aabb(behind, lo, hi, tn, tf));

  OccupancyGrid full(8, lo, hi, 0.01f, 1.0f);
  const auto all = march_ray(r, 0.03f, full);
  CHECK(all.size() == std::size_t(std::floor(2.0f / 0.03f)));
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i].t > all[i - 1].t);
  OccupancyGrid empty(8, lo, hi, 0.01f, 0.0f);
  CHECK(march_ray(r, 0.03f, empty).empty());
}

TEST_CASE("marching: half-space occupancy") {
  const Eigen::Vector3f lo(-1, -1, -1), hi(1, 1, 1);
  OccupancyGrid g(16, lo, hi, 0.01f, 0.0f);
  for (std::size_t i = 0; i < g.cell_count(); ++i) {
    const Eigen::Vector3f c = g.cell_min(i) + 0.5f * g.cell_size();
    g.densities[i] = c.x() > 0.0f ? 1.0f : 0.0f;
  }
  g.recompute();
  std::mt19937_64 rng(3);
  const float step = 0.02f;
  for (int k = 0; k < 200; ++k) {
    const Ray r = random_ray(rng);
    for (const RaySample& s : march_ray(r, step, g)) {
      const Eigen::Vector3f p = r.origin + s.t * r.direction;
      CHECK(p.x() > -step);
    }
  }
}

TEST_CASE("occupancy updates") {
  const Eigen::Vector3f lo(-1, -1, -1), hi(1, 1, 1);
  OccupancyGrid g(8, lo, hi, 0.01f, 1.0f);
  const DensityFn zero = [](std::span<const float>, std::span<float> s) { std::fill(s.begin(), s.end(), 0.0f); };
  for (int k = 0; k < 3; ++k) update_occupancy(g, zero, 0.5f, std::uint64_t(k));
  for (float d : g.densities) CHECK(d == doctest::Approx(0.125));
  for (int k = 0; k < 10; ++k) update_occupancy(g, zero, 0.5f, std::uint64_t(k));
  CHECK(g.occupied_count() == 0);
  const DensityFn big = [](std::span<const float>, std::span<float> s) { std::fill(s.begin(), s.end(), 1e3f); };
  update_occupancy(g, big, 0.95f, 1);
  CHECK(g.occupied_count() == g.cell_count());
  CHECK_THROWS_AS(update_occupancy(g, zero, 0.0f, 1), InvalidArgument);

  // sphere of radius 0.5: every cell the sphere crosses is marked
  OccupancyGrid s(16, lo, hi, 0.5f, 0.0f);
  const DensityFn ball = [](std::span<const float> p, std::span<float> sigma) {
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      const Eigen::Vector3f x(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
      sigma[i] = x.norm() < 0.5f ? 10.0f : 0.0f;
    }
  };
  for (int k = 0; k < 40; ++k) update_occupancy(s, ball, 1.0f, std::uint64_t(100 + k));
  const float half = 0.5f * s.cell_size().norm();
  for (std::size_t i = 0; i < s.cell_count(); ++i) {
    const Eigen::Vector3f c = s.cell_min(i) + 0.5f * s.cell_size();
    if (c.norm() < 0.5f - half) CHECK(s.occupancy[i] == 1);
    if (c.norm() > 0.5f + half) CHECK(s.occupancy[i] == 0);
  }

  std::stringstream ss;
  s.save(ss);
  const OccupancyGrid t = OccupancyGrid::load(ss);
  CHECK(t.densities == s.densities);
  CHECK(t.occupancy == s.occupancy);
}

TEST_CASE("renderer: all-occupied culling is bit-identical to the reference") {
  const RadianceModel m = small_model(4);
  Eigen::Vector3f lo, hi;
  occupancy_bounds(m, lo, hi);
  const OccupancyGrid full(8, lo, hi, 0.01f, 1.0f);
  RenderSettings s;
  s.step = 0.02f;
  s.c2f = C2FMode::substitution;
  s.c2f_alpha = 2.5;
  std::mt19937_64 rng(5);
  std::vector<Ray> rays;
  for (int i = 0; i < 64; ++i) rays.push_back(random_ray(rng));
  BatchRenderer br;
  br.forward(m, rays, s, &full);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const CompositeResult ref = render_ray_reference(m, rays[i], s, nullptr);
    for (int c = 0; c < 3; ++c) CHECK(br.colors()[i * 3 + std::size_t(c)] == ref.rgb[std::size_t(c)]);
    CHECK(br.opacities()[i] == ref.opacity);
  }
}

TEST_CASE("renderer: unbounded marching reaches far samples") {
  const RadianceModel m = small_model(6, true);
  RenderSettings s;
  s.step = 0.05f;
  s.far_samples = 16;
  std::vector<RaySample> out;
  const Ray r{Eigen::Vector3f(0.2f, 0.0f, 0.0f), Eigen::Vector3f(0, 0, 1)};
  march_ray_unbounded(r, s.step, s.far_samples, s.far_radius, nullptr, out);
  REQUIRE(out.size() > 16);
  for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i].t > out[i - 1].t);
  // last midpoint sits at 1/h = 1/far_radius + ds/2
  CHECK(out.back().t > 20.0f);
  const CompositeResult c = render_ray_reference(m, r, s, nullptr);
  CHECK(c.opacity >= 0.0f);
  CHECK(c.opacity <= 1.0f);
}

TEST_CASE("renderer: backward against finite differences") {
  // coarse grid so few samples straddle a cell face within the FD step
  RadianceModel m;
  m.grid = HashGrid(HashGridConfig{3, 2, 1u << 10, 2, 2, 4}, 7, 1.0f);
  m.mlp = FieldMLP(FieldMlpConfig{4, 16, 7, 16, 2}, 7);
  RenderSettings s;
  s.step = 0.04f;
  s.background = {0.3f, 0.6f, 0.9f};
  std::mt19937_64 rng(8);
  std::vector<Ray> rays;
  for (int i = 0; i < 6; ++i) rays.push_back(random_ray(rng, 2.5f));
  std::vector<float> up(rays.size() * 3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : up) v = u(rng);
  const auto objective = [&](const RadianceModel& model, const std::vector<Ray>& rs, std::size_t* samples) {
    BatchRenderer b;
    b.forward(model, rs, s, nullptr);
    if (samples) *samples = b.sample_count();
    double acc = 0.0;
    for (std::size_t k = 0; k < up.size(); ++k) acc += double(up[k]) * b.colors()[k];
    return acc;
  };
  BatchRenderer br;
  br.forward(m, rays, s, nullptr);
  ModelGradients g;
  g.resize_for(m);
  std::vector<float> go(rays.size() * 3), gd(rays.size() * 3);
  br.backward(m, up, g, go, gd);

  // decoder weights: linear around the current point up to ReLU kinks
  int agree = 0, total = 0;
  for (std::size_t k = 0; k < m.mlp.param_count(); k += 11) {
    RadianceModel a = m, b = m;
    a.mlp.params()[k] += 1e-3f;
    b.mlp.params()[k] -= 1e-3f;
    const double fd = (objective(a, rays, nullptr) - objective(b, rays, nullptr)) / 2e-3;
    agree += rel_close(g.mlp[k], fd, 2e-2, 1e-2);
    ++total;
  }
  CHECK(agree >= total * 9 / 10);

  // ray origin, and direction along tangents (directions stay unit length),
  // skipping perturbations that change the sample count
  int checked = 0;
  agree = 0;
  std::normal_distribution<float> nd;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for (int k = 0; k < 6; ++k) {
      const bool dir = k >= 3;
      Eigen::Vector3f e = Eigen::Vector3f::Zero();
      if (dir) {
        e = Eigen::Vector3f(nd(rng), nd(rng), nd(rng));
        e = (e - e.dot(rays[r].direction) * rays[r].direction).normalized();
      } else {
        e[k] = 1.0f;
      }
      const float h = 2e-4f;
      auto a = rays, b = rays;
      if (dir) {
        a[r].direction = (rays[r].direction + h * e).normalized();
        b[r].direction = (rays[r].direction - h * e).normalized();
      } else {
        a[r].origin += h * e;
        b[r].origin -= h * e;
      }
      std::size_t na = 0, nb = 0, n0 = 0;
      const double fa = objective(m, a, &na);
      const double fb = objective(m, b, &nb);
      objective(m, rays, &n0);
      if (na != n0 || nb != n0) continue;
      const double fd = (fa - fb) / (2.0 * h);
      const std::span<const float> g3 = std::span<const float>(dir ? gd : go).subspan(r * 3, 3);
      const double an = g3[0] * e[0] + g3[1] * e[1] + g3[2] * e[2];
      agree += rel_close(an, fd, 5e-2, 5e-2);
      ++checked;
    }
  }
  CHECK(checked >= 20);
  CHECK(agree >= checked * 9 / 10);
}
