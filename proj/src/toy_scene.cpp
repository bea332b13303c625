#include "baangp/toy_scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "baangp/error.hpp"
#include "baangp/renderer.hpp"

namespace baangp {

BlobScene BlobScene::random(int count, std::uint64_t seed) {
  if (count < 1) throw InvalidArgument("blob scene: need at least one blob");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BlobScene s;
  for (int i = 0; i < count; ++i) {
    Blob b;
    Vec3 c;
    do {
      c = Vec3(u(rng), u(rng), u(rng)) * 1.6 - Vec3::Constant(0.8);
    } while (c.norm() > 0.9);
    b.center = c;
    b.radius = 0.08 + 0.12 * u(rng);
    b.density = 15.0 + 25.0 * u(rng);
    // saturated colors: one channel high, one low
    const int hi = int(u(rng) * 3.0) % 3;
    const int lo = (hi + 1 + int(u(rng) * 2.0)) % 3;
    for (int ch = 0; ch < 3; ++ch) b.color[std::size_t(ch)] = 0.3 + 0.4 * u(rng);
    b.color[std::size_t(hi)] = 0.85 + 0.15 * u(rng);
    b.color[std::size_t(lo)] = 0.05 + 0.15 * u(rng);
    s.blobs.push_back(b);
  }
  return s;
}

double BlobScene::sigma(const Vec3& p) const {
  double acc = 0.0;
  for (const Blob& b : blobs) {
    acc += b.density * std::exp(-(p - b.center).squaredNorm() / (2.0 * b.radius * b.radius));
  }
  return acc;
}

std::array<double, 3> BlobScene::color(const Vec3& p) const {
  std::array<double, 3> c{0.0, 0.0, 0.0};
  double total = 0.0;
  for (const Blob& b : blobs) {
    const double w = b.density * std::exp(-(p - b.center).squaredNorm() / (2.0 * b.radius * b.radius));
    for (int ch = 0; ch < 3; ++ch) c[std::size_t(ch)] += w * b.color[std::size_t(ch)];
    total += w;
  }
  if (total <= 0.0) return {0.5, 0.5, 0.5};
  for (double& v : c) v /= total;
  return c;
}

Mat34 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 f = (target - eye).normalized();
  Vec3 r = f.cross(up);
  if (r.norm() < 1e-9) throw DegenerateConfiguration("look_at: view direction parallel to up");
  r.normalize();
  const Vec3 d = f.cross(r);
  Mat34 m;
  m.col(0) = r;
  m.col(1) = d;
  m.col(2) = f;
  m.col(3) = eye;
  return m;
}

Image render_blob_view(const BlobScene& scene, const CameraIntrinsics& intr, const Mat34& pose, double step) {
  intr.validate();
  Image img(intr.width, intr.height, 3);
  const Mat3 r = pose.leftCols<3>();
  const Vec3 o = pose.col(3);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const Vec3 d = r * camera_direction(intr, u, v);
      Ray ray{o.cast<float>(), d.cast<float>()};
      float t0, t1;
      double col[3] = {0.0, 0.0, 0.0};
      double trans = 1.0;
      if (intersect_aabb(ray, Eigen::Vector3f::Constant(-1.0f), Eigen::Vector3f::Constant(1.0f), t0, t1)) {
        const auto n = std::int64_t(std::floor((double(t1) - double(t0)) / step));
        for (std::int64_t i = 0; i < n && trans > 1e-6; ++i) {
          const Vec3 p = o + (double(t0) + (double(i) + 0.5) * step) * d;
          const double s = scene.sigma(p);
          if (s < 1e-8) continue;
          const double a = -std::expm1(-s * step);
          const auto c = scene.color(p);
          for (int ch = 0; ch < 3; ++ch) col[ch] += trans * a * c[std::size_t(ch)];
          trans *= 1.0 - a;
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at(u, v, ch) = float(col[ch] + trans);
    }
  }
  return img;
}

namespace {

Vec3 on_sphere(double radius, double azimuth, double elevation) {
  return radius * Vec3(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                       std::sin(elevation));
}

} // namespace

ToyScene make_toy_scene(const ToySceneOptions& o) {
  if (o.train_views < 3 || o.test_views < 0) throw InvalidArgument("toy scene: need at least 3 training views");
  ToyScene out;
  out.scene = BlobScene::random(o.blobs, o.seed);
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_x(o.width, o.height, o.camera_angle_x);
  std::mt19937_64 rng(o.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  const double pi = std::numbers::pi;
  const auto make_split = [&](int count, double phase, const char* name) {
    DatasetBundle b;
    b.name = name;
    b.intrinsics = intr;
    for (int i = 0; i < count; ++i) {
      const double az = 2.0 * pi * (double(i) + phase) / double(count) + jitter(rng);
      // elevations cycle through a band of the upper hemisphere
      const double el = (0.15 + 0.9 * double((i * 5) % count) / double(std::max(count - 1, 1))) + jitter(rng);
      const Mat34 pose = look_at(on_sphere(o.radius, az, std::clamp(el, 0.1, 1.3)));
      b.poses.push_back(pose);
      b.images.push_back(render_blob_view(out.scene, intr, pose, o.step));
    }
    return b;
  };
  out.train = make_split(o.train_views, 0.0, "train");
  out.test = make_split(o.test_views, 0.5, "test");
  return out;
}

Image make_procedural_image(int width, int height, std::uint64_t seed) {
  if (width < 1 || height < 1) throw InvalidArgument("procedural image: bad size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Spot {
    double x, y, r, c[3];
  };
  std::vector<Spot> spots;
  for (int i = 0; i < 90; ++i) {
    Spot s{u(rng), u(rng), 0.015 + 0.08 * std::pow(u(rng), 2.0), {u(rng), u(rng), u(rng)}};
    spots.push_back(s);
  }
  // fine texture on top of the coarse blobs
  for (int i = 0; i < 700; ++i) {
    Spot s{u(rng), u(rng), 0.004 + 0.01 * u(rng), {u(rng), u(rng), u(rng)}};
    spots.push_back(s);
  }
  const double fx = 3.0 + 4.0 * u(rng);
  const double fy = 3.0 + 4.0 * u(rng);
  Image img(width, height, 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = (double(x) + 0.5) / double(width);
      const double py = (double(y) + 0.5) / double(height);
      double c[3] = {0.25 + 0.5 * px, 0.3 + 0.4 * py, 0.6 - 0.3 * px * py};
      const double wave = 0.08 * std::sin(2.0 * std::numbers::pi * (fx * px + 0.5 * fy * py)) *
                          std::cos(2.0 * std::numbers::pi * fy * py);
      for (double& v : c) v += wave;
      for (const Spot& s : spots) {
        const double d2 = (px - s.x) * (px - s.x) + (py - s.y) * (py - s.y);
        const double w = std::exp(-d2 / (2.0 * s.r * s.r));
        for (int ch = 0; ch < 3; ++ch) c[ch] = (1.0 - w) * c[ch] + w * s.c[ch];
      }
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = float(std::clamp(c[ch], 0.0, 1.0));
    }
  }
  return img;
}

} // namespace baangp
