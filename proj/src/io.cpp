#include "baangp/io.hpp"

#include <unistd.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "baangp/error.hpp"

namespace baangp {

namespace fs = std::filesystem;

void atomic_write_file(const fs::path& path, const std::function<void(const fs::path& tmp)>& write) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  try {
    write(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void atomic_write_text(const fs::path& path, const std::string& text) {
  atomic_write_file(path, [&](const fs::path& tmp) {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write " + tmp.string());
    os << text;
    os.flush();
    if (!os) throw DataError("write failed: " + tmp.string());
  });
}

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<Mat34> read_pose_file(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<Mat34> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw DataError(path.string() + ":" + std::to_string(lineno) + ": not a number");
    if (v.empty()) continue;
    if (v.size() == 6) {
      Vec6 p;
      for (int i = 0; i < 6; ++i) p[i] = v[std::size_t(i)];
      poses.push_back(se3_exp(p));
    } else if (v.size() == 12) {
      Mat34 m;
      for (int i = 0; i < 12; ++i) m(i / 4, i % 4) = v[std::size_t(i)];
      poses.push_back(m);
    } else {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 6 or 12 numbers, got " +
                      std::to_string(v.size()));
    }
  }
  return poses;
}

void write_pose_file(const fs::path& path, const std::vector<Mat34>& poses) {
  std::ostringstream os;
  os << "# camera-to-world 3x4, row-major\n" << std::setprecision(17);
  for (const Mat34& m : poses) {
    for (int i = 0; i < 12; ++i) os << (i ? " " : "") << m(i / 4, i % 4);
    os << '\n';
  }
  atomic_write_text(path, os.str());
}

void DatasetBundle::validate() const {
  intrinsics.validate();
  if (images.empty()) throw DataError("dataset: no images");
  for (const Image& im : images) {
    if (im.width != intrinsics.width || im.height != intrinsics.height || im.channels != 3) {
      throw DataError("dataset: images must all be " + std::to_string(intrinsics.width) + "x" +
                      std::to_string(intrinsics.height) + " RGB");
    }
  }
  if (!poses.empty() && poses.size() != images.size()) throw DataError("dataset: pose count differs from image count");
}

Mat34 pose_from_opengl(const Eigen::Matrix4d& m) {
  Mat34 out = m.topRows<3>();
  out.col(1) = -out.col(1);
  out.col(2) = -out.col(2);
  return out;
}

Eigen::Matrix4d pose_to_opengl(const Mat34& pose) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topRows<3>() = pose;
  m.block<3, 1>(0, 1) = -m.block<3, 1>(0, 1);
  m.block<3, 1>(0, 2) = -m.block<3, 1>(0, 2);
  return m;
}

namespace {

fs::path frame_image_path(const fs::path& dir, const std::string& file_path) {
  fs::path p = dir / file_path;
  if (!p.has_extension()) p += ".png";
  return p.lexically_normal();
}

void check_rigid(const Mat34& pose, const std::string& where) {
  const Mat3 r = pose.leftCols<3>();
  const double orth = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = r.determinant();
  if (!(orth < 1e-3) || !(std::abs(det - 1.0) < 1e-3)) {
    std::ostringstream os;
    os << where << ": transform_matrix rotation block is not a proper rotation (det " << det << ")";
    throw DataError(os.str());
  }
}

} // namespace

DatasetBundle load_blender_dataset(const fs::path& dir, const std::string& split, std::array<float, 3> background) {
  const fs::path manifest = dir / ("transforms_" + split + ".json");
  if (!fs::exists(manifest)) throw DataError("missing manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  if (!j.contains("camera_angle_x") || !j.contains("frames") || !j["frames"].is_array()) {
    throw DataError(manifest.string() + ": needs camera_angle_x and frames");
  }
  DatasetBundle out;
  out.name = dir.filename().string();
  out.background = background;
  const double angle = j["camera_angle_x"].get<double>();
  std::size_t index = 0;
  for (const auto& frame : j["frames"]) {
    const std::string where = manifest.string() + " frame " + std::to_string(index++);
    if (!frame.contains("file_path") || !frame.contains("transform_matrix")) {
      throw DataError(where + ": needs file_path and transform_matrix");
    }
    const auto& tm = frame["transform_matrix"];
    if (!tm.is_array() || tm.size() != 4) throw DataError(where + ": transform_matrix must be 4x4");
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
      if (!tm[std::size_t(r)].is_array() || tm[std::size_t(r)].size() != 4) {
        throw DataError(where + ": transform_matrix must be 4x4");
      }
      for (int c = 0; c < 4; ++c) m(r, c) = tm[std::size_t(r)][std::size_t(c)].get<double>();
    }
    const Mat34 pose = pose_from_opengl(m);
    check_rigid(pose, where);
    const Image raw = read_png(frame_image_path(dir, frame["file_path"].get<std::string>()));
    out.images.push_back(composite_over(raw, background.data()));
    out.poses.push_back(pose);
  }
  if (out.images.empty()) throw DataError(manifest.string() + ": no frames");
  out.intrinsics = CameraIntrinsics::from_fov_x(out.images[0].width, out.images[0].height, angle);
  out.validate();
  return out;
}

void save_blender_dataset(const fs::path& dir, const std::string& split, const DatasetBundle& data) {
  data.validate();
  if (data.poses.size() != data.images.size()) throw InvalidArgument("save dataset: poses required");
  nlohmann::json j;
  j["camera_angle_x"] = 2.0 * std::atan(double(data.intrinsics.width) / (2.0 * data.intrinsics.fx));
  j["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const std::string rel = "./" + split + "/r_" + std::to_string(i);
    write_png(dir / split / ("r_" + std::to_string(i) + ".png"), data.images[i]);
    const Eigen::Matrix4d m = pose_to_opengl(data.poses[i]);
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    j["frames"].push_back({{"file_path", rel}, {"transform_matrix", rows}});
  }
  atomic_write_text(dir / ("transforms_" + split + ".json"), j.dump(2) + "\n");
}

} // namespace baangp
