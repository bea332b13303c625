#pragma once

// Procedural ground truth: an analytic blob radiance field rendered to a
// small multi-view dataset, and a synthetic texture for planar alignment.

#include <cstdint>
#include <vector>

#include "baangp/geometry.hpp"
#include "baangp/image.hpp"
#include "baangp/io.hpp"

namespace baangp {

struct Blob {
  Vec3 center;
  double radius = 0.2; // Gaussian standard deviation
  double density = 20.0;
  std::array<double, 3> color{};
};

// sigma(p) = sum_i density_i g_i(p); color(p) = sum_i density_i g_i(p) c_i / sigma(p).
struct BlobScene {
  std::vector<Blob> blobs;

  static BlobScene random(int count, std::uint64_t seed);
  double sigma(const Vec3& p) const;
  std::array<double, 3> color(const Vec3& p) const;
};

struct ToySceneOptions {
  int blobs = 24;
  int train_views = 16;
  int test_views = 4;
  int width = 64;
  int height = 64;
  double camera_angle_x = 1.2;
  double radius = 2.6;
  double step = 2e-3; // marching step of the ground-truth renderer
  std::uint64_t seed = 7;
};

// Camera at `eye` looking at the origin, world z up.
Mat34 look_at(const Vec3& eye, const Vec3& target = Vec3::Zero(), const Vec3& up = Vec3::UnitZ());

// Quadrature of the blob field inside [-1,1]^3 over a white background.
Image render_blob_view(const BlobScene& scene, const CameraIntrinsics& intr, const Mat34& pose, double step);

struct ToyScene {
  BlobScene scene;
  DatasetBundle train;
  DatasetBundle test;
};

ToyScene make_toy_scene(const ToySceneOptions& options);

// Deterministic RGB texture with detail at several scales.
Image make_procedural_image(int width, int height, std::uint64_t seed);

} // namespace baangp
