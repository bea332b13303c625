#pragma once

// Image quality and pose accuracy.

#include <limits>
#include <span>
#include <vector>

#include "baangp/geometry.hpp"
#include "baangp/image.hpp"

namespace baangp {

// -10 log10(MSE) over all pixels and channels; +infinity when MSE is 0.
double mse(const Image& img, const Image& ref);
double psnr(const Image& img, const Image& ref);

struct SsimOptions {
  double k1 = 0.01;
  double k2 = 0.03;
  int window = 11;
  double sigma = 1.5;
  double max_value = 1.0;
};

// Mean over valid (unpadded) Gaussian windows and channels of
// (2 mu_x mu_y + C1)(2 cov + C2) / ((mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2)).
double ssim(const Image& img, const Image& ref, const SsimOptions& options = {});

inline const std::vector<double>& default_ms_ssim_weights() {
  static const std::vector<double> w = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  return w;
}

// Contrast-structure terms at every scale, full SSIM at the coarsest, each
// clamped at 0 and raised to its weight; 2x average pooling between scales.
// Throws InvalidArgument when the image cannot hold a window at the last scale.
double ms_ssim(const Image& img, const Image& ref, std::span<const double> weights = default_ms_ssim_weights(),
               const SsimOptions& options = {});
// Minimum side length ms_ssim accepts for the given number of scales.
int ms_ssim_min_size(int levels, int window = 11);

// y = scale * R x + t
struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * rotation * x + translation; }
  // Camera-to-world pose moved by the similarity (rotation composed, center mapped).
  Mat34 apply(const Mat34& pose) const;
  Similarity inverse() const;
};

struct PoseErrorReport {
  std::vector<double> rotation_deg;
  std::vector<double> translation;
  double mean_rotation_deg = 0.0;
  double mean_translation = 0.0;
  Similarity alignment; // maps estimated cameras onto ground truth
};

// Least-squares similarity taking `src` points onto `dst` (closed form via SVD).
Similarity umeyama_similarity(std::span<const Vec3> src, std::span<const Vec3> dst);

// Aligns estimated camera centers to ground truth, then measures per-camera
// rotation angle and center distance. Needs >= 3 non-collinear cameras.
PoseErrorReport procrustes_align(std::span<const Mat34> estimated, std::span<const Mat34> ground_truth);

// Errors without alignment (identity similarity).
PoseErrorReport pose_errors(std::span<const Mat34> estimated, std::span<const Mat34> ground_truth,
                            const Similarity& alignment = {});

} // namespace baangp
