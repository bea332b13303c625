#pragma once

// Cameras, rigid poses, planar warps and space contraction.
//
// Poses are camera-to-world 3x4 matrices [R | c] with an OpenCV-style camera
// frame (x right, y down, +z forward). Pose parameters are se(3) vectors
// (omega, rho): rotation R = exp([omega]x), translation c = V(omega) rho.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace baangp {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat12x6 = Eigen::Matrix<double, 12, 6>;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  static CameraIntrinsics from_fov_x(int width, int height, double camera_angle_x);
};

Mat34 identity_pose();
Mat34 compose(const Mat34& a, const Mat34& b); // a * b as 4x4 rigid transforms
Mat34 invert(const Mat34& pose);

Mat34 se3_exp(const Vec6& params);
// Also returns d(row-major 12 entries of the matrix)/d(params).
Mat34 se3_exp(const Vec6& params, Mat12x6& jacobian);
// Inverse of se3_exp for rotation angles in [0, pi).
Vec6 se3_log(const Mat34& pose);

struct PoseSE3 {
  Vec6 params = Vec6::Zero();

  Mat34 matrix() const { return se3_exp(params); }
  static PoseSE3 from_matrix(const Mat34& m) { return {se3_log(m)}; }
};

// params' = params + N(0, sigma^2 I6), deterministic for a given seed.
PoseSE3 perturb_pose(const PoseSE3& pose, double sigma, std::uint64_t seed);

// Angle in degrees between two rotations: arccos((tr(A B^T) - 1) / 2), argument clamped.
double rotation_angle_deg(const Mat3& a, const Mat3& b);

struct Ray {
  Eigen::Vector3f origin;
  Eigen::Vector3f direction; // unit length
};

struct PixelCoord {
  int u = 0;
  int v = 0;
};

// Unit viewing direction in the camera frame through the pixel center.
Eigen::Vector3d camera_direction(const CameraIntrinsics& intr, double u, double v);

std::vector<Ray> generate_rays(const CameraIntrinsics& intr, const Mat34& pose, std::span<const PixelCoord> pixels);

// Ray for pose parameters together with d(origin)/d(params) and d(direction)/d(params).
struct RayJacobian {
  Vec3 origin;
  Vec3 direction;
  Eigen::Matrix<double, 3, 6> d_origin;
  Eigen::Matrix<double, 3, 6> d_direction;
};
RayJacobian generate_ray_jacobian(const CameraIntrinsics& intr, const PoseSE3& pose, PixelCoord pixel);

// --- space contraction -----------------------------------------------------

enum class ContractionMode { bounded_aabb, inverted_sphere };

enum class ContractionBranch { aabb, in_sphere, out_sphere };

struct SceneContraction {
  ContractionMode mode = ContractionMode::bounded_aabb;
  Vec3 aabb_min = Vec3::Constant(-1.0);
  Vec3 aabb_max = Vec3::Constant(1.0);
};

struct ContractedPoint {
  ContractionBranch branch = ContractionBranch::aabb;
  int dim = 3;
  // (x, y, z) or the quadruple (x/h, y/h, z/h, 1/h).
  std::array<double, 4> raw{};
  // Affinely mapped into the unit cube / hypercube.
  std::array<double, 4> unit{};
};

ContractedPoint contract(const Vec3& point, const SceneContraction& contraction);

// Float fast path used while training: writes unit coordinates (3 or 4) and
// the Jacobian d unit / d point (row-major, rows = unit dim, 3 columns).
// Returns the branch; throws OutOfDomain for bounded points outside the box.
ContractionBranch contract_unit(const float* point, const SceneContraction& contraction, float* unit,
                                float* jacobian);

// --- planar warps ------------------------------------------------------------

using Mat9x8 = Eigen::Matrix<double, 9, 8>;

// sl(3) exponential: 8 generator weights -> 3x3 matrix with H(2,2) = 1.
Mat3 homography_exp(const Vec8& params);
Mat3 homography_exp(const Vec8& params, Mat9x8& jacobian); // jacobian of row-major entries

struct Homography2D {
  Vec8 params = Vec8::Zero();
  Mat3 matrix() const { return homography_exp(params); }
};

// Projective application; throws DegenerateConfiguration when |w'| < 1e-12.
Eigen::Vector2d homography_apply(const Mat3& h, const Eigen::Vector2d& uv);
Eigen::Vector2d homography_apply(const Homography2D& warp, const Eigen::Vector2d& uv);

} // namespace baangp
