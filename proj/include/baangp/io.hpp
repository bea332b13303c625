#pragma once

// Files on disk: atomic writes, pose lists and transforms-JSON datasets.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "baangp/geometry.hpp"
#include "baangp/image.hpp"

namespace baangp {

// Calls `write` on a temporary sibling path, then renames it over `path`.
// The temporary is removed if `write` throws.
void atomic_write_file(const std::filesystem::path& path,
                       const std::function<void(const std::filesystem::path& tmp)>& write);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

std::string read_text_file(const std::filesystem::path& path);

// Pose files: one camera per line, either 6 se(3) numbers (omega, rho) or 12
// numbers of a row-major 3x4 camera-to-world matrix. '#' starts a comment.
std::vector<Mat34> read_pose_file(const std::filesystem::path& path);
void write_pose_file(const std::filesystem::path& path, const std::vector<Mat34>& poses);

struct DatasetBundle {
  std::vector<Image> images; // RGB
  CameraIntrinsics intrinsics;
  std::vector<Mat34> poses; // ground truth; empty when unknown
  std::string name;
  std::array<float, 3> background{1.0f, 1.0f, 1.0f};

  void validate() const;
};

// transform_matrix (OpenGL camera: y up, looking down -z) <-> our camera frame.
Mat34 pose_from_opengl(const Eigen::Matrix4d& m);
Eigen::Matrix4d pose_to_opengl(const Mat34& pose);

// Reads <dir>/transforms_<split>.json. RGBA images are composited over `background`.
DatasetBundle load_blender_dataset(const std::filesystem::path& dir, const std::string& split = "train",
                                   std::array<float, 3> background = {1.0f, 1.0f, 1.0f});
// Writes <dir>/transforms_<split>.json plus <dir>/<split>/r_<i>.png.
void save_blender_dataset(const std::filesystem::path& dir, const std::string& split, const DatasetBundle& data);

} // namespace baangp
