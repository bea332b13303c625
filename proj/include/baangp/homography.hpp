#pragma once

// Planar alignment: a 2D hash-encoded color field fitted jointly with the
// warps of several overlapping patches cut from one image.
//
// Image coordinates are normalized to [-1,1] along both axes. Patch-local
// coordinates span [-h, h]^2 with h = patch_half_size; patch i shows the
// image at warp_i(u).

#include <array>
#include <cstdint>
#include <span>
#include <functional>
#include <vector>

#include "baangp/geometry.hpp"
#include "baangp/image.hpp"
#include "baangp/trainer.hpp"

namespace baangp {

// Patch 0 is the identity. Patch i > 0 gets sl(3) noise N(0, noise^2) plus a
// translation of +-offset in x and y (cycling through the four diagonals).
std::vector<Homography2D> make_ground_truth_warps(int patches, double offset, double noise, std::uint64_t seed);

// Bilinear lookup with clamp-to-edge at normalized coordinates.
void sample_image(const Image& image, double x, double y, float* rgb);

// Mean distance in pixels between the four patch corners mapped by `a` and `b`,
// averaged over patches. One normalized unit is width/2 pixels.
double mean_corner_error_px(const std::vector<Mat3>& a, const std::vector<Mat3>& b, double half_size, int width);

struct PlanarSample {
  int patch = 0;
  Eigen::Vector2d local = Eigen::Vector2d::Zero(); // patch-local coordinates
  std::array<float, 3> target{};
};

struct PlanarGradients {
  std::vector<float> grid;
  std::vector<float> mlp;
  std::vector<double> warps; // 8 per patch
};

// Mean squared color error of sigmoid(mlp(c2f(grid(warp_p(u))))) against the
// targets. Points mapped outside [-1,1] are clamped and pass no gradient
// along the clamped axis. Gradients are overwritten when `grads` is non-null.
double planar_loss(const HashGrid& grid, const Mlp& mlp, std::span<const float> mlp_params,
                   const std::vector<Vec8>& warps, C2FMode c2f, double alpha, std::span<const PlanarSample> samples,
                   PlanarGradients* grads);

struct HomographyTraceRow {
  int iteration = 0;
  double loss = 0.0;
  double corner_error_px = 0.0;
};

struct HomographyResult {
  std::vector<Homography2D> ground_truth;
  std::vector<Homography2D> estimate;
  std::vector<HomographyTraceRow> trace;
  double initial_error_px = 0.0;
  double final_error_px = 0.0;
  HashGrid grid;
  Mlp mlp;
  std::vector<float> mlp_params;
  double final_alpha = 0.0;
};

std::string homography_csv_header();
std::string homography_csv_row(const HomographyTraceRow& row);

HomographyResult run_homography_experiment(const Image& image, const TrainConfig& config,
                                           const std::function<void(const HomographyTraceRow&)>& on_row = {});

// The learned field over the whole image with ground-truth (green) and
// estimated (red) patch outlines drawn on top.
Image render_homography_visualization(const HomographyResult& result, const TrainConfig& config, int width,
                                      int height);

} // namespace baangp
