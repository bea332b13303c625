#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "baangp/error.hpp"
#include "baangp/metrics.hpp"

using namespace baangp;

namespace {

// Float32 test patterns shared with the numpy/scikit-image oracle script.
Image pattern_a() {
  Image im(32, 24, 3);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) im.at(x, y, c) = float(((73 * x + 151 * y + 31 * c) % 97) / 96.0);
  return im;
}

Image pattern_b() {
  Image im(32, 24, 3);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        const double a = double(float(((73 * x + 151 * y + 31 * c) % 97) / 96.0));
        const double p = ((37 * x + 11 * y + 53 * c) % 89) / 88.0;
        im.at(x, y, c) = float(0.7 * a + 0.3 * p);
      }
  return im;
}

Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image im(w, h, 3);
  for (float& v : im.data) v = u(rng);
  return im;
}

std::vector<Mat34> random_cameras(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<Mat34> out;
  for (int i = 0; i < n; ++i) {
    Vec6 p;
    for (int k = 0; k < 6; ++k) p[k] = nd(rng);
    out.push_back(se3_exp(p));
  }
  return out;
}

} // namespace

TEST_CASE("psnr") {
  const Image a(8, 8, 3, 0.5f), b(8, 8, 3, 0.6f);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(psnr(a, Image(8, 8, 3, 0.0f)) == doctest::Approx(6.020599913279624).epsilon(1e-9));
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(pattern_a(), pattern_b()) == doctest::Approx(18.13119319950854).epsilon(1e-6));
  const Image r1 = random_image(9, 7, 1), r2 = random_image(9, 7, 2);
  CHECK(psnr(r1, r2) == psnr(r2, r1));
  CHECK_THROWS_AS(psnr(a, Image(8, 7, 3)), InvalidArgument);
}

TEST_CASE("ssim") {
  const Image a = pattern_a();
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, pattern_b()) == doctest::Approx(0.8834866273362398).epsilon(1e-6));
  CHECK(ssim(Image(16, 16, 3, 0.2f), Image(16, 16, 3, 0.8f)) == doctest::Approx(0.47066607851786507).epsilon(1e-6));
  Image neg = a;
  for (float& v : neg.data) v = 1.0f - v;
  CHECK(ssim(a, neg) < 0.0);
  const Image r1 = random_image(20, 20, 3), r2 = random_image(20, 20, 4);
  CHECK(ssim(r1, r2) == doctest::Approx(ssim(r2, r1)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(Image(8, 8, 3), Image(8, 8, 3)), InvalidArgument);
  SsimOptions even;
  even.window = 10;
  CHECK_THROWS_AS(ssim(a, a, even), InvalidArgument);
}

TEST_CASE("ms-ssim") {
  const int n = ms_ssim_min_size(5);
  CHECK(n == 176);
  const Image a = random_image(n, n, 5);
  Image b = a;
  std::mt19937_64 rng(6);
  std::normal_distribution<float> nd(0.0f, 0.05f);
  for (float& v : b.data) v = std::clamp(v + nd(rng), 0.0f, 1.0f);
  CHECK(ms_ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  const double m = ms_ssim(a, b);
  CHECK(m > 0.0);
  CHECK(m < 1.0);
  const std::vector<double> one = {1.0};
  CHECK(ms_ssim(a, b, one) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
  CHECK_THROWS_AS(ms_ssim(random_image(n - 1, n, 1), random_image(n - 1, n, 2)), InvalidArgument);
}

TEST_CASE("umeyama matches Eigen") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + int(rng() % 10);
    std::vector<Vec3> src, dst;
    Eigen::Matrix3Xd S(3, n), D(3, n);
    for (int i = 0; i < n; ++i) {
      src.emplace_back(nd(rng), nd(rng), nd(rng));
      dst.emplace_back(nd(rng), nd(rng), nd(rng));
      S.col(i) = src.back();
      D.col(i) = dst.back();
    }
    const Eigen::Matrix4d ref = Eigen::umeyama(S, D, true);
    const Similarity sim = umeyama_similarity(src, dst);
    const Mat3 sr = sim.scale * sim.rotation;
    CHECK((sr - ref.topLeftCorner<3, 3>()).norm() < 1e-9);
    CHECK((sim.translation - ref.topRightCorner<3, 1>()).norm() < 1e-9);
    CHECK(std::abs(sim.rotation.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("procrustes recovers a known similarity") {
  const auto gt = random_cameras(8, 8);
  Similarity sim;
  sim.scale = 2.0;
  sim.rotation = Eigen::AngleAxisd(M_PI / 6.0, Vec3(1, 2, 2).normalized()).toRotationMatrix();
  sim.translation = Vec3(1, 2, 3);
  std::vector<Mat34> est;
  for (const Mat34& p : gt) est.push_back(sim.apply(p));
  const PoseErrorReport rep = procrustes_align(est, gt);
  const Similarity back = rep.alignment.inverse();
  CHECK(std::abs(back.scale - 2.0) < 1e-6);
  CHECK(rotation_angle_deg(back.rotation, sim.rotation) < 1e-6);
  CHECK(std::abs(rotation_angle_deg(back.rotation, Mat3::Identity()) - 30.0) < 1e-6);
  CHECK((back.translation - Vec3(1, 2, 3)).norm() < 1e-6);
  CHECK(rep.mean_rotation_deg < 1e-6);
  CHECK(rep.mean_translation < 1e-6);
}

TEST_CASE("procrustes reports an injected rotation") {
  const auto gt = random_cameras(6, 9);
  std::vector<Mat34> est = gt;
  const Mat3 kick = Eigen::AngleAxisd(10.0 * M_PI / 180.0, Vec3(0.3, -0.5, 0.8).normalized()).toRotationMatrix();
  est[2].leftCols<3>() = est[2].leftCols<3>() * kick;
  const PoseErrorReport rep = procrustes_align(est, gt);
  CHECK(std::abs(rep.rotation_deg[2] - 10.0) < 1e-4);
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (i != 2) CHECK(rep.rotation_deg[i] < 1e-6);
  CHECK(rep.mean_rotation_deg == doctest::Approx(10.0 / 6.0).epsilon(1e-5));
}

TEST_CASE("procrustes is invariant to a common similarity") {
  const auto gt = random_cameras(7, 10);
  std::vector<Mat34> est;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (const Mat34& p : gt) {
    Vec6 d;
    for (int k = 0; k < 6; ++k) d[k] = nd(rng);
    est.push_back(compose(se3_exp(d), p));
  }
  const PoseErrorReport base = procrustes_align(est, gt);
  Similarity sim;
  sim.scale = 0.4;
  sim.rotation = Eigen::AngleAxisd(1.1, Vec3(0, 1, 0)).toRotationMatrix();
  sim.translation = Vec3(-3, 0.5, 7);
  std::vector<Mat34> moved;
  for (const Mat34& p : est) moved.push_back(sim.apply(p));
  const PoseErrorReport rep = procrustes_align(moved, gt);
  CHECK(rep.mean_rotation_deg == doctest::Approx(base.mean_rotation_deg).epsilon(1e-6));
  CHECK(rep.mean_translation == doctest::Approx(base.mean_translation).epsilon(1e-6));
}

TEST_CASE("procrustes rejects degenerate input") {
  const auto gt = random_cameras(2, 12);
  CHECK_THROWS(procrustes_align(gt, gt));
  auto line = random_cameras(4, 13);
  for (int i = 0; i < 4; ++i) line[std::size_t(i)].col(3) = Vec3(double(i), 0, 0);
  CHECK_THROWS(procrustes_align(line, line));
  const auto a = random_cameras(4, 14), b = random_cameras(5, 15);
  CHECK_THROWS_AS(procrustes_align(a, b), InvalidArgument);
}
