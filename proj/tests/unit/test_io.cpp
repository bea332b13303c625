#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "baangp/error.hpp"
#include "baangp/io.hpp"

using namespace baangp;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("baangp_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

} // namespace

TEST_CASE("png round trip") {
  const fs::path dir = scratch_dir("png");
  Image im(13, 7, 3);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 13; ++x)
      for (int c = 0; c < 3; ++c) im.at(x, y, c) = float((x * 17 + y * 29 + c * 83) % 256) / 255.0f;
  im.at(0, 0, 0) = 1.7f;  // clamped
  im.at(1, 0, 0) = -0.2f; // clamped
  write_png(dir / "a.png", im);
  const Image back = read_png(dir / "a.png");
  REQUIRE(back.same_shape(im));
  CHECK(back.at(0, 0, 0) == 1.0f);
  CHECK(back.at(1, 0, 0) == 0.0f);
  for (int y = 0; y < 7; ++y)
    for (int x = 2; x < 13; ++x)
      for (int c = 0; c < 3; ++c) CHECK(back.at(x, y, c) == im.at(x, y, c));

  Image rgba(4, 4, 4, 0.5f);
  write_png(dir / "b.png", rgba);
  CHECK(read_png(dir / "b.png").channels == 4);

  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), DataError);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), DataError);
}

TEST_CASE("alpha compositing") {
  Image rgba(2, 1, 4);
  rgba.at(0, 0, 0) = 1.0f;
  rgba.at(0, 0, 3) = 0.25f;
  rgba.at(1, 0, 1) = 0.5f;
  rgba.at(1, 0, 3) = 1.0f;
  const float bg[3] = {0.0f, 1.0f, 0.0f};
  const Image rgb = composite_over(rgba, bg);
  CHECK(rgb.channels == 3);
  CHECK(rgb.at(0, 0, 0) == doctest::Approx(0.25));
  CHECK(rgb.at(0, 0, 1) == doctest::Approx(0.75));
  CHECK(rgb.at(1, 0, 1) == doctest::Approx(0.5));
  CHECK(composite_over(Image(2, 2, 3, 0.3f), bg).data == Image(2, 2, 3, 0.3f).data);
  CHECK_THROWS_AS(composite_over(Image(2, 2, 2), bg), InvalidArgument);
}

TEST_CASE("atomic writes") {
  const fs::path dir = scratch_dir("atomic");
  atomic_write_text(dir / "t.txt", "hello\n");
  CHECK(read_text_file(dir / "t.txt") == "hello\n");
  CHECK_THROWS(atomic_write_file(dir / "t.txt", [](const fs::path& tmp) {
    std::ofstream(tmp) << "partial";
    throw std::runtime_error("boom");
  }));
  CHECK(read_text_file(dir / "t.txt") == "hello\n");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  CHECK_THROWS_AS(read_text_file(dir / "nope.txt"), DataError);
}

TEST_CASE("pose files") {
  const fs::path dir = scratch_dir("poses");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<Mat34> poses;
  for (int i = 0; i < 5; ++i) {
    Vec6 p;
    for (int k = 0; k < 6; ++k) p[k] = nd(rng);
    poses.push_back(se3_exp(p));
  }
  write_pose_file(dir / "p.txt", poses);
  const auto back = read_pose_file(dir / "p.txt");
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) CHECK((back[i] - poses[i]).norm() < 1e-12);

  std::ofstream(dir / "twist.txt") << "# omega rho\n0 0 0 1 2 3\n\n0.1 0 0 0 0 0 # comment\n";
  const auto tw = read_pose_file(dir / "twist.txt");
  REQUIRE(tw.size() == 2);
  CHECK((tw[0].col(3) - Vec3(1, 2, 3)).norm() < 1e-12);
  CHECK(rotation_angle_deg(tw[1].leftCols<3>(), Mat3::Identity()) == doctest::Approx(0.1 * 180.0 / M_PI));

  std::ofstream(dir / "bad.txt") << "1 2 3\n";
  CHECK_THROWS_AS(read_pose_file(dir / "bad.txt"), DataError);
  std::ofstream(dir / "nan.txt") << "1 2 x 4 5 6\n";
  CHECK_THROWS_AS(read_pose_file(dir / "nan.txt"), DataError);
}

TEST_CASE("opengl pose convention") {
  const Mat34 p = pose_from_opengl(Eigen::Matrix4d::Identity());
  CHECK(p.col(0).isApprox(Vec3(1, 0, 0)));
  CHECK(p.col(1).isApprox(Vec3(0, -1, 0)));
  CHECK(p.col(2).isApprox(Vec3(0, 0, -1)));
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.7, Vec3(1, 1, 0).normalized()).toRotationMatrix();
  m.topRightCorner<3, 1>() = Vec3(0.5, -2, 4);
  CHECK((pose_to_opengl(pose_from_opengl(m)) - m).norm() < 1e-12);
}

TEST_CASE("blender dataset") {
  const fs::path dir = scratch_dir("blender");
  fs::create_directories(dir / "train");
  Image rgba(8, 6, 4);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) {
      rgba.at(x, y, 0) = 1.0f;
      rgba.at(x, y, 3) = x < 4 ? 1.0f : 0.0f;
    }
  write_png(dir / "train" / "r_0.png", rgba);
  write_png(dir / "train" / "r_1.png", rgba);
  nlohmann::json j;
  j["camera_angle_x"] = 0.6911112070083618;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 3) = 4.0;
  for (int i = 0; i < 2; ++i) {
    nlohmann::json f;
    f["file_path"] = "./train/r_" + std::to_string(i);
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    f["transform_matrix"] = rows;
    j["frames"].push_back(f);
  }
  std::ofstream(dir / "transforms_train.json") << j.dump(2);

  const DatasetBundle d = load_blender_dataset(dir, "train", {0.0f, 0.0f, 1.0f});
  REQUIRE(d.images.size() == 2);
  REQUIRE(d.poses.size() == 2);
  // 800 px at this field of view gives the familiar focal length
  CHECK(CameraIntrinsics::from_fov_x(800, 800, 0.6911112070083618).fx == doctest::Approx(1111.1110311937682).epsilon(1e-12));
  CHECK(d.intrinsics.fx == doctest::Approx(4.0 / std::tan(0.6911112070083618 / 2.0)));
  CHECK(d.intrinsics.width == 8);
  CHECK(d.intrinsics.height == 6);
  CHECK(d.images[0].channels == 3);
  CHECK(d.images[0].at(0, 0, 0) == 1.0f);
  CHECK(d.images[0].at(0, 0, 2) == 0.0f);
  CHECK(d.images[0].at(6, 0, 0) == 0.0f);
  CHECK(d.images[0].at(6, 0, 2) == 1.0f);
  CHECK((d.poses[0] - pose_from_opengl(m)).norm() < 1e-12);

  // save and reload keeps images and poses
  const fs::path out = scratch_dir("blender_out");
  save_blender_dataset(out, "test", d);
  const DatasetBundle r = load_blender_dataset(out, "test");
  REQUIRE(r.images.size() == 2);
  CHECK(r.intrinsics.fx == doctest::Approx(d.intrinsics.fx));
  CHECK((r.poses[1] - d.poses[1]).norm() < 1e-9);
  CHECK(r.images[1].data == d.images[1].data);

  CHECK_THROWS_AS(load_blender_dataset(dir, "val"), DataError);
  std::ofstream(dir / "transforms_broken.json") << "{\"frames\": []}";
  CHECK_THROWS_AS(load_blender_dataset(dir, "broken"), DataError);
}
