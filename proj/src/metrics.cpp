#include "baangp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "baangp/error.hpp"

namespace baangp {
namespace {

void check_pair(const Image& img, const Image& ref, const char* what) {
  if (!img.same_shape(ref)) throw InvalidArgument(std::string(what) + ": image shapes differ");
  if (img.data.empty()) throw InvalidArgument(std::string(what) + ": empty image");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  double sum = 0.0;
  const double c = double(size / 2);
  for (int i = 0; i < size; ++i) {
    const double x = double(i) - c;
    w[std::size_t(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += w[std::size_t(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> v;
  double at(int x, int y) const { return v[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
};

Plane channel(const Image& img, int c) {
  Plane p{img.width, img.height, std::vector<double>(std::size_t(img.width) * std::size_t(img.height))};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p.v[std::size_t(y) * std::size_t(img.width) + std::size_t(x)] = img.at(x, y, c);
  return p;
}

// Valid-mode separable filtering.
Plane filter(const Plane& in, const std::vector<double>& w) {
  const int k = int(w.size());
  const int ow = in.width - k + 1;
  const int oh = in.height - k + 1;
  Plane tmp{ow, in.height, std::vector<double>(std::size_t(ow) * std::size_t(in.height))};
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += w[std::size_t(i)] * in.at(x + i, y);
      tmp.v[std::size_t(y) * std::size_t(ow) + std::size_t(x)] = acc;
    }
  }
  Plane out{ow, oh, std::vector<double>(std::size_t(ow) * std::size_t(oh))};
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += w[std::size_t(i)] * tmp.at(x, y + i);
      out.v[std::size_t(y) * std::size_t(ow) + std::size_t(x)] = acc;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

struct SsimTerms {
  double ssim = 0.0;
  double cs = 0.0; // contrast-structure part only
};

SsimTerms ssim_plane(const Plane& x, const Plane& y, const std::vector<double>& w, const SsimOptions& o) {
  const double c1 = (o.k1 * o.max_value) * (o.k1 * o.max_value);
  const double c2 = (o.k2 * o.max_value) * (o.k2 * o.max_value);
  const Plane mx = filter(x, w);
  const Plane my = filter(y, w);
  const Plane sxx = filter(product(x, x), w);
  const Plane syy = filter(product(y, y), w);
  const Plane sxy = filter(product(x, y), w);
  double sum_ssim = 0.0;
  double sum_cs = 0.0;
  for (std::size_t i = 0; i < mx.v.size(); ++i) {
    const double ux = mx.v[i];
    const double uy = my.v[i];
    const double vx = sxx.v[i] - ux * ux;
    const double vy = syy.v[i] - uy * uy;
    const double cov = sxy.v[i] - ux * uy;
    const double cs = (2.0 * cov + c2) / (vx + vy + c2);
    const double lum = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
    sum_ssim += lum * cs;
    sum_cs += cs;
  }
  const double n = double(mx.v.size());
  return {sum_ssim / n, sum_cs / n};
}

Plane downsample(const Plane& in) {
  Plane out{in.width / 2, in.height / 2, {}};
  out.v.resize(std::size_t(out.width) * std::size_t(out.height));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.v[std::size_t(y) * std::size_t(out.width) + std::size_t(x)] =
          0.25 * (in.at(2 * x, 2 * y) + in.at(2 * x + 1, 2 * y) + in.at(2 * x, 2 * y + 1) + in.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

void check_window(const SsimOptions& o) {
  if (o.window < 1 || o.window % 2 == 0) throw InvalidArgument("ssim: window must be odd and positive");
  if (!(o.sigma > 0.0)) throw InvalidArgument("ssim: sigma must be positive");
}

} // namespace

double mse(const Image& img, const Image& ref) {
  check_pair(img, ref, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double d = double(img.data[i]) - double(ref.data[i]);
    acc += d * d;
  }
  return acc / double(img.data.size());
}

double psnr(const Image& img, const Image& ref) {
  const double m = mse(img, ref);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(m);
}

double ssim(const Image& img, const Image& ref, const SsimOptions& options) {
  check_pair(img, ref, "ssim");
  check_window(options);
  if (img.width < options.window || img.height < options.window) {
    throw InvalidArgument("ssim: image smaller than the " + std::to_string(options.window) + "px window");
  }
  const auto w = gaussian_window(options.window, options.sigma);
  double acc = 0.0;
  for (int c = 0; c < img.channels; ++c) acc += ssim_plane(channel(img, c), channel(ref, c), w, options).ssim;
  return acc / double(img.channels);
}

int ms_ssim_min_size(int levels, int window) { return window << std::max(0, levels - 1); }

double ms_ssim(const Image& img, const Image& ref, std::span<const double> weights, const SsimOptions& options) {
  check_pair(img, ref, "ms_ssim");
  check_window(options);
  if (weights.empty()) throw InvalidArgument("ms_ssim: no scale weights");
  const int levels = int(weights.size());
  const int need = ms_ssim_min_size(levels, options.window);
  if (img.width < need || img.height < need) {
    throw InvalidArgument("ms_ssim: image must be at least " + std::to_string(need) + "px on each side for " +
                          std::to_string(levels) + " scales");
  }
  const auto w = gaussian_window(options.window, options.sigma);
  double acc = 0.0;
  for (int c = 0; c < img.channels; ++c) {
    Plane x = channel(img, c);
    Plane y = channel(ref, c);
    double value = 1.0;
    for (int l = 0; l < levels; ++l) {
      const SsimTerms t = ssim_plane(x, y, w, options);
      const double term = (l == levels - 1) ? t.ssim : t.cs;
      value *= std::pow(std::max(term, 0.0), weights[std::size_t(l)]);
      if (l + 1 < levels) {
        x = downsample(x);
        y = downsample(y);
      }
    }
    acc += value;
  }
  return acc / double(img.channels);
}

// --- poses -------------------------------------------------------------------

Mat34 Similarity::apply(const Mat34& pose) const {
  Mat34 out;
  out.leftCols<3>() = rotation * pose.leftCols<3>();
  out.col(3) = apply(Vec3(pose.col(3)));
  return out;
}

Similarity Similarity::inverse() const {
  Similarity inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.transpose();
  inv.translation = -inv.scale * (inv.rotation * translation);
  return inv;
}

namespace {

Vec3 mean_of(std::span<const Vec3> pts) {
  Vec3 m = Vec3::Zero();
  for (const Vec3& p : pts) m += p;
  return m / double(pts.size());
}

void check_spread(std::span<const Vec3> pts, const Vec3& mean, const char* which) {
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : pts) cov += (p - mean) * (p - mean).transpose();
  const Eigen::JacobiSVD<Mat3> svd(cov);
  const Vec3 s = svd.singularValues();
  if (!(s[0] > 1e-18) || s[1] <= 1e-10 * s[0]) {
    throw DegenerateConfiguration(std::string("procrustes: ") + which + " camera centers are coincident or collinear");
  }
}

} // namespace

Similarity umeyama_similarity(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw InvalidArgument("procrustes: point counts differ");
  if (src.size() < 3) throw DegenerateConfiguration("procrustes: need at least 3 cameras");
  const Vec3 ms = mean_of(src);
  const Vec3 md = mean_of(dst);
  check_spread(src, ms, "estimated");
  check_spread(dst, md, "ground-truth");
  const double n = double(src.size());
  Mat3 sigma = Mat3::Zero();
  double var_src = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    sigma += (dst[i] - md) * (src[i] - ms).transpose();
    var_src += (src[i] - ms).squaredNorm();
  }
  sigma /= n;
  var_src /= n;
  const Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s[2] = -1.0;
  Similarity out;
  out.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  out.scale = svd.singularValues().dot(s) / var_src;
  out.translation = md - out.scale * out.rotation * ms;
  return out;
}

PoseErrorReport pose_errors(std::span<const Mat34> estimated, std::span<const Mat34> ground_truth,
                            const Similarity& alignment) {
  if (estimated.size() != ground_truth.size()) throw InvalidArgument("pose errors: camera counts differ");
  PoseErrorReport r;
  r.alignment = alignment;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    const Mat34 aligned = alignment.apply(estimated[i]);
    r.rotation_deg.push_back(rotation_angle_deg(aligned.leftCols<3>(), ground_truth[i].leftCols<3>()));
    r.translation.push_back((aligned.col(3) - ground_truth[i].col(3)).norm());
  }
  if (!estimated.empty()) {
    for (std::size_t i = 0; i < estimated.size(); ++i) {
      r.mean_rotation_deg += r.rotation_deg[i];
      r.mean_translation += r.translation[i];
    }
    r.mean_rotation_deg /= double(estimated.size());
    r.mean_translation /= double(estimated.size());
  }
  return r;
}

PoseErrorReport procrustes_align(std::span<const Mat34> estimated, std::span<const Mat34> ground_truth) {
  if (estimated.size() != ground_truth.size()) throw InvalidArgument("procrustes: camera counts differ");
  std::vector<Vec3> src, dst;
  for (const Mat34& p : estimated) src.push_back(p.col(3));
  for (const Mat34& p : ground_truth) dst.push_back(p.col(3));
  return pose_errors(estimated, ground_truth, umeyama_similarity(src, dst));
}

} // namespace baangp
