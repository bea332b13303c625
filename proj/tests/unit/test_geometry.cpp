#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "baangp/error.hpp"
#include "baangp/geometry.hpp"
#include "../support.hpp"

using namespace baangp;
using testsupport::rel_close;

namespace {

Vec6 random_params(std::mt19937_64& rng, double max_angle = 3.0) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 w(n(rng), n(rng), n(rng));
  w = w.normalized() * u(rng);
  Vec6 p;
  p << w, n(rng), n(rng), n(rng);
  return p;
}

} // namespace

TEST_CASE("se3: exponential basics") {
  CHECK(se3_exp(Vec6::Zero()).isApprox(identity_pose()));
  Vec6 p = Vec6::Zero();
  p[2] = std::numbers::pi / 2.0;
  const Mat34 m = se3_exp(p);
  const Vec3 y = m.leftCols<3>() * Vec3(1, 0, 0);
  CHECK(y.x() == doctest::Approx(0.0).scale(1.0));
  CHECK(y.y() == doctest::Approx(1.0));
  CHECK(m.col(3).norm() == 0.0);
}

TEST_CASE("se3: matches the matrix exponential and stays orthonormal") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec6 p = random_params(rng);
    const Mat34 m = se3_exp(p);
    const Mat3 r = m.leftCols<3>();
    CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-6);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-6);
    CHECK((m - testsupport::oracle_se3_exp(p)).norm() < 1e-9);
  }
  // small-angle branch
  Vec6 tiny;
  tiny << 1e-9, -2e-9, 3e-10, 0.5, -0.25, 1.0;
  CHECK((se3_exp(tiny) - testsupport::oracle_se3_exp(tiny)).norm() < 1e-12);
}

TEST_CASE("se3: log inverts exp") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec6 p = random_params(rng, 3.1);
    CHECK((se3_log(se3_exp(p)) - p).norm() < 1e-6);
  }
  CHECK(se3_log(identity_pose()).norm() == 0.0);
}

TEST_CASE("se3: jacobian matches finite differences") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 60; ++i) {
    const Vec6 p = random_params(rng, 2.5);
    Mat12x6 j;
    se3_exp(p, j);
    for (int k = 0; k < 6; ++k) {
      Vec6 a = p, b = p;
      a[k] += 1e-6;
      b[k] -= 1e-6;
      const Mat34 d = (se3_exp(a) - se3_exp(b)) / 2e-6;
      for (int e = 0; e < 12; ++e) CHECK(rel_close(j(e, k), d(e / 4, e % 4), 1e-5, 1e-2));
    }
  }
}

TEST_CASE("se3: compose and invert") {
  std::mt19937_64 rng(4);
  const Mat34 a = se3_exp(random_params(rng));
  const Mat34 b = se3_exp(random_params(rng));
  CHECK(compose(a, invert(a)).isApprox(identity_pose(), 1e-12));
  const Vec3 x(0.3, -1.0, 2.0);
  const Mat34 ab = compose(a, b);
  const Vec3 via = a.leftCols<3>() * (b.leftCols<3>() * x + b.col(3)) + a.col(3);
  CHECK((ab.leftCols<3>() * x + ab.col(3) - via).norm() < 1e-12);
}

TEST_CASE("perturb_pose") {
  const PoseSE3 base{};
  CHECK(perturb_pose(base, 0.0, 5).params == base.params);
  CHECK(perturb_pose(base, 0.15, 5).params == perturb_pose(base, 0.15, 5).params);
  CHECK(perturb_pose(base, 0.15, 5).params != perturb_pose(base, 0.15, 6).params);
  PoseSE3 shifted;
  shifted.params << 1, 2, 3, 4, 5, 6;
  CHECK((perturb_pose(shifted, 0.15, 9).params - shifted.params).isApprox(perturb_pose(base, 0.15, 9).params));
  Vec6 sum = Vec6::Zero(), sq = Vec6::Zero();
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Vec6 e = perturb_pose(base, 0.15, std::uint64_t(1000 + i)).params;
    sum += e;
    sq += e.cwiseProduct(e);
  }
  for (int k = 0; k < 6; ++k) {
    const double mean = sum[k] / n;
    const double sd = std::sqrt(sq[k] / n - mean * mean);
    CHECK(std::abs(sd - 0.15) < 0.05 * 0.15);
  }
  CHECK_THROWS_AS(perturb_pose(base, -1.0, 1), InvalidArgument);
}

TEST_CASE("rotation angle") {
  const Mat3 a = testsupport::oracle_rotation(Vec3(0.2, -0.4, 0.1));
  const Mat3 b = a * testsupport::oracle_rotation(Vec3(0, 0, 10.0 * std::numbers::pi / 180.0));
  CHECK(rotation_angle_deg(a, b) == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(rotation_angle_deg(a, a) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("rays: generation") {
  const CameraIntrinsics k{50.0, 50.0, 16.5, 12.5, 32, 24};
  const PixelCoord centre{16, 12};
  const auto r = generate_rays(k, identity_pose(), std::span<const PixelCoord>(&centre, 1));
  CHECK(r[0].direction.isApprox(Eigen::Vector3f(0, 0, 1)));
  CHECK(r[0].origin.norm() == 0.0f);

  Mat34 moved = identity_pose();
  moved.col(3) = Vec3(1, 2, 3);
  std::vector<PixelCoord> px = {{0, 0}, {31, 23}, {5, 17}};
  const auto a = generate_rays(k, identity_pose(), px);
  const auto b = generate_rays(k, moved, px);
  for (std::size_t i = 0; i < px.size(); ++i) {
    CHECK(a[i].direction == b[i].direction);
    CHECK(b[i].origin.isApprox(Eigen::Vector3f(1, 2, 3)));
    CHECK(std::abs(a[i].direction.norm() - 1.0f) < 1e-6f);
  }
  const PixelCoord out{32, 0};
  CHECK_THROWS_AS(generate_rays(k, identity_pose(), std::span<const PixelCoord>(&out, 1)), InvalidArgument);
  CHECK(CameraIntrinsics::from_fov_x(800, 800, 0.6911).fx == doctest::Approx(1111.1305676630343).epsilon(1e-12));
}

TEST_CASE("rays: pose jacobian matches finite differences") {
  std::mt19937_64 rng(5);
  const CameraIntrinsics k = CameraIntrinsics::from_fov_x(40, 30, 0.9);
  for (int i = 0; i < 60; ++i) {
    const PoseSE3 pose{random_params(rng, 2.5)};
    const PixelCoord px{int(rng() % 40), int(rng() % 30)};
    const RayJacobian rj = generate_ray_jacobian(k, pose, px);
    const auto ray_of = [&](const Vec6& p, Vec3& o, Vec3& d) {
      const Mat34 m = se3_exp(p);
      o = m.col(3);
      d = m.leftCols<3>() * camera_direction(k, px.u, px.v);
    };
    Vec3 o0, d0;
    ray_of(pose.params, o0, d0);
    CHECK((o0 - rj.origin).norm() < 1e-12);
    CHECK((d0 - rj.direction).norm() < 1e-12);
    for (int j = 0; j < 6; ++j) {
      Vec6 a = pose.params, b = pose.params;
      a[j] += 1e-6;
      b[j] -= 1e-6;
      Vec3 oa, da, ob, db;
      ray_of(a, oa, da);
      ray_of(b, ob, db);
      for (int c = 0; c < 3; ++c) {
        CHECK(rel_close(rj.d_direction(c, j), (da[c] - db[c]) / 2e-6, 1e-4, 1e-2));
        CHECK(rel_close(rj.d_origin(c, j), (oa[c] - ob[c]) / 2e-6, 1e-4, 1e-2));
      }
    }
  }
}

TEST_CASE("contraction: bounded box") {
  SceneContraction sc;
  sc.aabb_min = Vec3(-1, -2, 0);
  sc.aabb_max = Vec3(1, 2, 4);
  const ContractedPoint c = contract(Vec3(0, 1, 1), sc);
  CHECK(c.branch == ContractionBranch::aabb);
  CHECK(c.unit[0] == doctest::Approx(0.5));
  CHECK(c.unit[1] == doctest::Approx(0.75));
  CHECK(c.unit[2] == doctest::Approx(0.25));
  CHECK_THROWS_AS(contract(Vec3(0, 3, 1), sc), OutOfDomain);
  float p[3] = {0.0f, 1.0f, 1.0f}, u[4], j[12];
  CHECK(contract_unit(p, sc, u, j) == ContractionBranch::aabb);
  CHECK(u[1] == doctest::Approx(0.75));
  CHECK(j[0] == doctest::Approx(0.5));
  CHECK(j[4] == doctest::Approx(0.25));
}

TEST_CASE("contraction: inverted sphere") {
  SceneContraction sc;
  sc.mode = ContractionMode::inverted_sphere;
  const ContractedPoint far = contract(Vec3(2, 0, 0), sc);
  CHECK(far.branch == ContractionBranch::out_sphere);
  CHECK(far.dim == 4);
  CHECK(far.raw == std::array<double, 4>{1.0, 0.0, 0.0, 0.5});

  const Vec3 dir = Vec3(0.3, -0.5, 0.8).normalized();
  const ContractedPoint in = contract(dir * (1.0 - 1e-6), sc);
  const ContractedPoint out = contract(dir * (1.0 + 1e-6), sc);
  CHECK(in.branch == ContractionBranch::in_sphere);
  CHECK(out.branch == ContractionBranch::out_sphere);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(in.raw[std::size_t(i)] - out.raw[std::size_t(i)]) < 1e-4);
  CHECK(std::abs(out.raw[3] - 1.0) < 1e-4);
  const ContractedPoint on = contract(dir, sc);
  CHECK(on.branch == ContractionBranch::in_sphere);

  double prev = 1.0;
  for (double h : {10.0, 1e3, 1e6}) {
    const ContractedPoint c = contract(dir * h, sc);
    CHECK(c.raw[3] < prev);
    prev = c.raw[3];
  }
  CHECK(prev < 1.0001e-6);
  for (int i = 0; i < 4; ++i) {
    CHECK(far.unit[std::size_t(i)] >= 0.0);
    CHECK(far.unit[std::size_t(i)] <= 1.0);
  }
}

TEST_CASE("contraction: float jacobian matches finite differences") {
  SceneContraction sc;
  sc.mode = ContractionMode::inverted_sphere;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    Vec3 p(n(rng), n(rng), n(rng));
    p *= (i % 2 ? 3.0 : 0.4) / p.norm() * (0.8 + 0.3 * (i % 3));
    float pf[3] = {float(p.x()), float(p.y()), float(p.z())}, u[4], j[12];
    const ContractionBranch b = contract_unit(pf, sc, u, j);
    const int dim = b == ContractionBranch::out_sphere ? 4 : 3;
    for (int c = 0; c < 3; ++c) {
      Vec3 a = p, m = p;
      a[c] += 1e-6;
      m[c] -= 1e-6;
      const ContractedPoint ca = contract(a, sc), cm = contract(m, sc);
      for (int r = 0; r < dim; ++r) {
        const double fd = (ca.unit[std::size_t(r)] - cm.unit[std::size_t(r)]) / 2e-6;
        CHECK(rel_close(j[r * 3 + c], fd, 1e-3, 1e-2));
      }
    }
  }
}

TEST_CASE("homography: exponential and application") {
  const Eigen::Vector2d uv(0.3, -0.7);
  CHECK(homography_exp(Vec8::Zero()).isApprox(Mat3::Identity()));
  CHECK((homography_apply(Homography2D{}, uv) - uv).norm() == 0.0);
  Vec8 t = Vec8::Zero();
  t[0] = 0.25;
  t[1] = -0.5;
  CHECK((homography_apply(Homography2D{t}, uv) - (uv + Eigen::Vector2d(0.25, -0.5))).norm() < 1e-12);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 0.2);
  for (int i = 0; i < 100; ++i) {
    Vec8 a, b;
    for (int k = 0; k < 8; ++k) {
      a[k] = n(rng);
      b[k] = n(rng);
    }
    const Mat3 ha = homography_exp(a), hb = homography_exp(b);
    CHECK(ha(2, 2) == doctest::Approx(1.0));
    const Eigen::Vector2d x(n(rng), n(rng));
    // inverse through the matrix inverse
    CHECK((homography_apply(Mat3(ha.inverse()), homography_apply(ha, x)) - x).norm() < 1e-6);
    // and through the group exponential
    CHECK((homography_apply(homography_exp(-a), homography_apply(ha, x)) - x).norm() < 1e-6);
    CHECK((homography_apply(ha, homography_apply(hb, x)) - homography_apply(Mat3(ha * hb), x)).norm() < 1e-6);
    CHECK(std::abs(ha.determinant()) > 0.0);
  }
  Mat3 degenerate = Mat3::Identity();
  degenerate(2, 2) = 0.0;
  CHECK_THROWS_AS(homography_apply(degenerate, Eigen::Vector2d(0, 0)), DegenerateConfiguration);
}

TEST_CASE("homography: jacobian matches finite differences") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int i = 0; i < 50; ++i) {
    Vec8 p;
    for (int k = 0; k < 8; ++k) p[k] = n(rng);
    Mat9x8 j;
    homography_exp(p, j);
    for (int k = 0; k < 8; ++k) {
      Vec8 a = p, b = p;
      a[k] += 1e-6;
      b[k] -= 1e-6;
      const Mat3 d = (homography_exp(a) - homography_exp(b)) / 2e-6;
      for (int e = 0; e < 9; ++e) CHECK(rel_close(j(e, k), d(e / 3, e % 3), 1e-5, 1e-2));
    }
  }
}
