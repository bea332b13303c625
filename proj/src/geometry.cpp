#include "baangp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/LU>

#include "baangp/dual.hpp"
#include "baangp/error.hpp"

namespace baangp {
namespace {

// Below this |omega| the Rodrigues coefficients use their Taylor series; the
// closed forms lose digits (1 - cos) well before 1e-6.
constexpr double kSmallAngleSq = 1e-6;

// Writes the row-major 3x4 matrix exp(xi) for xi = (omega, rho).
template <class T>
void se3_exp_impl(const T* xi, T* out) {
  const T& wx = xi[0];
  const T& wy = xi[1];
  const T& wz = xi[2];
  const T theta_sq = wx * wx + wy * wy + wz * wz;
  T a, b, c;
  const double tsq = value_of(theta_sq);
  if (tsq < kSmallAngleSq) {
    const T t4 = theta_sq * theta_sq;
    a = T(1.0) - theta_sq / T(6.0) + t4 / T(120.0);
    b = T(0.5) - theta_sq / T(24.0) + t4 / T(720.0);
    c = T(1.0 / 6.0) - theta_sq / T(120.0) + t4 / T(5040.0);
  } else {
    using std::sin;
    using std::sqrt;
    const T theta = sqrt(theta_sq);
    const T s = sin(theta);
    const T half = sin(theta * T(0.5));
    a = s / theta;
    b = T(2.0) * half * half / theta_sq;
    c = (theta - s) / (theta_sq * theta);
  }
  // K = [omega]x, K2 = K * K
  const T k[9] = {T(0.0), -wz, wy, wz, T(0.0), -wx, -wy, wx, T(0.0)};
  T k2[9];
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) {
      T acc = T(0.0);
      for (int m = 0; m < 3; ++m) acc += k[r * 3 + m] * k[m * 3 + col];
      k2[r * 3 + col] = acc;
    }
  }
  for (int r = 0; r < 3; ++r) {
    T t = T(0.0);
    for (int col = 0; col < 3; ++col) {
      const T id = (r == col) ? T(1.0) : T(0.0);
      out[r * 4 + col] = id + a * k[r * 3 + col] + b * k2[r * 3 + col];
      const T v = id + b * k[r * 3 + col] + c * k2[r * 3 + col];
      t += v * xi[3 + col];
    }
    out[r * 4 + 3] = t;
  }
}

Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

// Left Jacobian V(omega) of SE(3).
Mat3 se3_left_jacobian(const Vec3& w) {
  const double tsq = w.squaredNorm();
  double b, c;
  if (tsq < kSmallAngleSq) {
    b = 0.5 - tsq / 24.0 + tsq * tsq / 720.0;
    c = 1.0 / 6.0 - tsq / 120.0 + tsq * tsq / 5040.0;
  } else {
    const double t = std::sqrt(tsq);
    const double h = std::sin(0.5 * t);
    b = 2.0 * h * h / tsq;
    c = (t - std::sin(t)) / (tsq * t);
  }
  const Mat3 k = skew(w);
  return Mat3::Identity() + b * k + c * k * k;
}

template <class T>
void sl3_generator(const T* h, T* a) {
  // Traceless basis shared with the classic planar-alignment setup:
  // [[h5, h3, h1], [h4, -h5-h6, h2], [h7, h8, h6]].
  a[0] = h[4];
  a[1] = h[2];
  a[2] = h[0];
  a[3] = h[3];
  a[4] = -h[4] - h[5];
  a[5] = h[1];
  a[6] = h[6];
  a[7] = h[7];
  a[8] = h[5];
}

template <class T>
void mat3_mul(const T* x, const T* y, T* out) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      T acc = T(0.0);
      for (int m = 0; m < 3; ++m) acc += x[r * 3 + m] * y[m * 3 + c];
      out[r * 3 + c] = acc;
    }
  }
}

// Matrix exponential by scaling and squaring with a Taylor core, then scaled so out[8] = 1.
template <class T>
void homography_exp_impl(const T* params, T* out) {
  T a[9];
  sl3_generator(params, a);
  double norm = 0.0;
  for (int r = 0; r < 3; ++r) {
    double row = 0.0;
    for (int c = 0; c < 3; ++c) row += std::abs(value_of(a[r * 3 + c]));
    norm = std::max(norm, row);
  }
  int squarings = 0;
  if (norm > 0.25) squarings = int(std::ceil(std::log2(norm / 0.25)));
  const double scale = std::ldexp(1.0, -squarings);
  for (T& x : a) x = x * T(scale);
  T result[9], term[9], next[9];
  for (int i = 0; i < 9; ++i) {
    result[i] = (i % 4 == 0) ? T(1.0) : T(0.0);
    term[i] = result[i];
  }
  for (int n = 1; n <= 14; ++n) {
    mat3_mul(term, a, next);
    for (int i = 0; i < 9; ++i) {
      term[i] = next[i] / T(double(n));
      result[i] += term[i];
    }
  }
  for (int s = 0; s < squarings; ++s) {
    mat3_mul(result, result, next);
    std::copy(next, next + 9, result);
  }
  const T inv = T(1.0) / result[8];
  for (int i = 0; i < 9; ++i) out[i] = result[i] * inv;
}

} // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("intrinsics: focal lengths must be positive");
  if (width < 1 || height < 1) throw InvalidArgument("intrinsics: image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw InvalidArgument("intrinsics: principal point outside the image");
  }
}

CameraIntrinsics CameraIntrinsics::from_fov_x(int width, int height, double camera_angle_x) {
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.fx = k.fy = double(width) / (2.0 * std::tan(camera_angle_x / 2.0));
  k.cx = double(width) / 2.0;
  k.cy = double(height) / 2.0;
  return k;
}

Mat34 identity_pose() {
  Mat34 m = Mat34::Zero();
  m.leftCols<3>().setIdentity();
  return m;
}

Mat34 compose(const Mat34& a, const Mat34& b) {
  Mat34 out;
  out.leftCols<3>() = a.leftCols<3>() * b.leftCols<3>();
  out.col(3) = a.leftCols<3>() * b.col(3) + a.col(3);
  return out;
}

Mat34 invert(const Mat34& pose) {
  Mat34 out;
  const Mat3 rt = pose.leftCols<3>().transpose();
  out.leftCols<3>() = rt;
  out.col(3) = -rt * pose.col(3);
  return out;
}

Mat34 se3_exp(const Vec6& params) {
  double out[12];
  se3_exp_impl<double>(params.data(), out);
  Mat34 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = out[r * 4 + c];
  return m;
}

Mat34 se3_exp(const Vec6& params, Mat12x6& jacobian) {
  using D = Dual<6>;
  D xi[6];
  for (int i = 0; i < 6; ++i) xi[i] = D::seed(params[i], std::size_t(i));
  D out[12];
  se3_exp_impl<D>(xi, out);
  Mat34 m;
  for (int e = 0; e < 12; ++e) {
    m(e / 4, e % 4) = out[e].v;
    for (int i = 0; i < 6; ++i) jacobian(e, i) = out[e].d[std::size_t(i)];
  }
  return m;
}

Vec6 se3_log(const Mat34& pose) {
  const Mat3 r = pose.leftCols<3>();
  const Eigen::AngleAxisd aa(r);
  Vec3 w = aa.angle() * aa.axis();
  if (aa.angle() == 0.0) w.setZero();
  const Vec3 rho = se3_left_jacobian(w).lu().solve(Vec3(pose.col(3)));
  Vec6 out;
  out << w, rho;
  return out;
}

PoseSE3 perturb_pose(const PoseSE3& pose, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("perturb_pose: sigma must be non-negative");
  PoseSE3 out = pose;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (int i = 0; i < 6; ++i) out.params[i] += n(rng);
  return out;
}

double rotation_angle_deg(const Mat3& a, const Mat3& b) {
  // atan2 keeps precision near 0 and 180 degrees where acos does not
  const Mat3 r = a * b.transpose();
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0)) * 180.0 / std::numbers::pi;
}

Eigen::Vector3d camera_direction(const CameraIntrinsics& intr, double u, double v) {
  const Eigen::Vector3d d((u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy, 1.0);
  return d.normalized();
}

namespace {

void check_pixel(const CameraIntrinsics& intr, PixelCoord p) {
  if (p.u < 0 || p.v < 0 || p.u >= intr.width || p.v >= intr.height) {
    throw InvalidArgument("generate_rays: pixel (" + std::to_string(p.u) + ", " + std::to_string(p.v) +
                          ") outside " + std::to_string(intr.width) + "x" + std::to_string(intr.height));
  }
}

} // namespace

std::vector<Ray> generate_rays(const CameraIntrinsics& intr, const Mat34& pose, std::span<const PixelCoord> pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  const Mat3 r = pose.leftCols<3>();
  const Eigen::Vector3f origin = pose.col(3).cast<float>();
  for (const PixelCoord& p : pixels) {
    check_pixel(intr, p);
    const Vec3 d = (r * camera_direction(intr, p.u, p.v)).normalized();
    rays.push_back(Ray{origin, d.cast<float>()});
  }
  return rays;
}

RayJacobian generate_ray_jacobian(const CameraIntrinsics& intr, const PoseSE3& pose, PixelCoord pixel) {
  check_pixel(intr, pixel);
  Mat12x6 j;
  const Mat34 m = se3_exp(pose.params, j);
  const Vec3 n = camera_direction(intr, pixel.u, pixel.v);
  RayJacobian out;
  out.origin = m.col(3);
  out.direction = m.leftCols<3>() * n;
  for (int row = 0; row < 3; ++row) {
    out.d_origin.row(row) = j.row(row * 4 + 3);
    Eigen::Matrix<double, 1, 6> acc = Eigen::Matrix<double, 1, 6>::Zero();
    for (int c = 0; c < 3; ++c) acc += n[c] * j.row(row * 4 + c);
    out.d_direction.row(row) = acc;
  }
  return out;
}

// --- contraction ---------------------------------------------------------

namespace {

// Points this far (in unit-cube coordinates) outside the box are snapped back;
// ray-box intersections land a few ulps outside routinely.
constexpr double kBoundsSlack = 1e-5;

} // namespace

ContractedPoint contract(const Vec3& p, const SceneContraction& sc) {
  ContractedPoint out;
  if (sc.mode == ContractionMode::bounded_aabb) {
    out.branch = ContractionBranch::aabb;
    out.dim = 3;
    for (int i = 0; i < 3; ++i) {
      const double u = (p[i] - sc.aabb_min[i]) / (sc.aabb_max[i] - sc.aabb_min[i]);
      if (!(u >= -kBoundsSlack && u <= 1.0 + kBoundsSlack)) {
        throw OutOfDomain("contract: point outside the scene bounding box");
      }
      out.raw[std::size_t(i)] = p[i];
      out.unit[std::size_t(i)] = std::clamp(u, 0.0, 1.0);
    }
    return out;
  }
  const double h = p.norm();
  if (h <= 1.0) {
    out.branch = ContractionBranch::in_sphere;
    out.dim = 3;
    for (int i = 0; i < 3; ++i) {
      out.raw[std::size_t(i)] = p[i];
      out.unit[std::size_t(i)] = std::clamp((p[i] + 1.0) * 0.5, 0.0, 1.0);
    }
    return out;
  }
  out.branch = ContractionBranch::out_sphere;
  out.dim = 4;
  for (int i = 0; i < 3; ++i) {
    out.raw[std::size_t(i)] = p[i] / h;
    out.unit[std::size_t(i)] = std::clamp((p[i] / h + 1.0) * 0.5, 0.0, 1.0);
  }
  out.raw[3] = 1.0 / h;
  out.unit[3] = 1.0 / h;
  return out;
}

ContractionBranch contract_unit(const float* p, const SceneContraction& sc, float* unit, float* jac) {
  if (sc.mode == ContractionMode::bounded_aabb) {
    for (int i = 0; i < 3; ++i) {
      const float lo = float(sc.aabb_min[i]);
      const float inv = float(1.0 / (sc.aabb_max[i] - sc.aabb_min[i]));
      const float u = (p[i] - lo) * inv;
      if (!(u >= -float(kBoundsSlack) && u <= 1.0f + float(kBoundsSlack))) {
        throw OutOfDomain("contract: point outside the scene bounding box");
      }
      unit[i] = std::clamp(u, 0.0f, 1.0f);
      if (jac) {
        for (int c = 0; c < 3; ++c) jac[i * 3 + c] = (c == i) ? inv : 0.0f;
      }
    }
    return ContractionBranch::aabb;
  }
  const float h = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  if (h <= 1.0f) {
    for (int i = 0; i < 3; ++i) {
      unit[i] = std::clamp((p[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
      if (jac) {
        for (int c = 0; c < 3; ++c) jac[i * 3 + c] = (c == i) ? 0.5f : 0.0f;
      }
    }
    return ContractionBranch::in_sphere;
  }
  const float inv_h = 1.0f / h;
  float q[3];
  for (int i = 0; i < 3; ++i) {
    q[i] = p[i] * inv_h;
    unit[i] = std::clamp((q[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
  }
  unit[3] = inv_h;
  if (jac) {
    // d(p/h)/dp = (I - q q^T) / h ; d(1/h)/dp = -q / h^2
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) {
        jac[i * 3 + c] = 0.5f * (((c == i) ? 1.0f : 0.0f) - q[i] * q[c]) * inv_h;
      }
    }
    for (int c = 0; c < 3; ++c) jac[9 + c] = -q[c] * inv_h * inv_h;
  }
  return ContractionBranch::out_sphere;
}

// --- homography ------------------------------------------------------------

Mat3 homography_exp(const Vec8& params) {
  double out[9];
  homography_exp_impl<double>(params.data(), out);
  Mat3 h;
  for (int e = 0; e < 9; ++e) h(e / 3, e % 3) = out[e];
  return h;
}

Mat3 homography_exp(const Vec8& params, Mat9x8& jacobian) {
  using D = Dual<8>;
  D p[8];
  for (int i = 0; i < 8; ++i) p[i] = D::seed(params[i], std::size_t(i));
  D out[9];
  homography_exp_impl<D>(p, out);
  Mat3 h;
  for (int e = 0; e < 9; ++e) {
    h(e / 3, e % 3) = out[e].v;
    for (int i = 0; i < 8; ++i) jacobian(e, i) = out[e].d[std::size_t(i)];
  }
  return h;
}

Eigen::Vector2d homography_apply(const Mat3& h, const Eigen::Vector2d& uv) {
  const Eigen::Vector3d x = h * Eigen::Vector3d(uv.x(), uv.y(), 1.0);
  if (std::abs(x.z()) < 1e-12) throw DegenerateConfiguration("homography_apply: point maps to infinity");
  return x.head<2>() / x.z();
}

Eigen::Vector2d homography_apply(const Homography2D& warp, const Eigen::Vector2d& uv) {
  return homography_apply(warp.matrix(), uv);
}

} // namespace baangp
