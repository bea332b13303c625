#include "baangp/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "baangp/binary_io.hpp"
#include "baangp/error.hpp"

namespace baangp {

// --- config ------------------------------------------------------------------

Experiment parse_experiment(const std::string& name) {
  if (name == "homography2d" || name == "homography") return Experiment::homography2d;
  if (name == "bounded3d" || name == "bounded") return Experiment::bounded3d;
  if (name == "unbounded3d" || name == "unbounded") return Experiment::unbounded3d;
  throw InvalidArgument("unknown experiment '" + name + "' (homography2d, bounded3d, unbounded3d)");
}

std::string to_string(Experiment e) {
  switch (e) {
  case Experiment::homography2d:
    return "homography2d";
  case Experiment::bounded3d:
    return "bounded3d";
  case Experiment::unbounded3d:
    return "unbounded3d";
  }
  return "?";
}

TrainConfig TrainConfig::defaults(Experiment e) {
  TrainConfig c;
  c.experiment = e;
  switch (e) {
  case Experiment::bounded3d:
    break;
  case Experiment::unbounded3d:
    c.network_lr = LrSchedule::warmup_step(1e-4, 1e-2, 100, {10000, 15000, 18000}, 0.33);
    c.pose_lr = LrSchedule::warmup_step(3e-4, 3e-3, 100, {10000, 15000, 18000}, 0.33);
    c.target_samples = 1024 * 64;
    c.background = {0.0f, 0.0f, 0.0f};
    break;
  case Experiment::homography2d:
    c.iterations = 5000;
    c.network_lr = LrSchedule::constant(1e-2);
    c.pose_lr = LrSchedule::constant(3e-3);
    c.grid = HashGridConfig{2, 18, 1u << 15, 2, 3, 256};
    c.c2f_schedule = C2FSchedule{0.1, 0.5, 18};
    c.log_interval = 10;
    break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (iterations <= 0) throw InvalidArgument("config: iterations must be > 0");
  if (batch_rays < 1 || min_rays < 1 || max_rays < min_rays) throw InvalidArgument("config: bad ray batch sizes");
  if (target_samples < 0) throw InvalidArgument("config: target_samples must be >= 0");
  network_lr.validate();
  pose_lr.validate();
  if (!(pose_noise >= 0.0)) throw InvalidArgument("config: pose_noise must be >= 0");
  c2f_schedule.validate();
  grid.validate();
  const int want_dim = experiment == Experiment::homography2d ? 2 : 3;
  if (grid.dim != want_dim) {
    throw InvalidArgument("config: grid dimension must be " + std::to_string(want_dim) + " for " + to_string(experiment));
  }
  if (experiment != Experiment::homography2d) {
    if (!((aabb_max - aabb_min).minCoeff() > 0.0)) throw InvalidArgument("config: empty aabb");
    if (samples_per_diagonal < 1) throw InvalidArgument("config: samples_per_diagonal must be >= 1");
    if (far_samples < 0 || !(far_radius > 1.0)) throw InvalidArgument("config: bad far-field sampling");
    if (occupancy_resolution < 0 || occupancy_interval < 1 || occupancy_warmup < 0) {
      throw InvalidArgument("config: bad occupancy cadence");
    }
    if (!(occupancy_decay > 0.0 && occupancy_decay <= 1.0)) throw InvalidArgument("config: occupancy_decay in (0,1]");
    if (!(occupancy_threshold >= 0.0)) throw InvalidArgument("config: occupancy_threshold must be >= 0");
    if (mlp.density_hidden < 1 || mlp.color_hidden < 1 || mlp.geo_features < 0 || mlp.sh_degree < 1 ||
        mlp.sh_degree > 4) {
      throw InvalidArgument("config: bad decoder shape");
    }
  } else {
    if (patches < 1) throw InvalidArgument("config: patches must be >= 1");
    if (!(patch_half_size > 0.0)) throw InvalidArgument("config: patch_half_size must be > 0");
    if (patch_batch < 1 || image_size < 8 || field_hidden < 1) throw InvalidArgument("config: bad planar settings");
    if (!(warp_noise >= 0.0)) throw InvalidArgument("config: warp_noise must be >= 0");
  }
  if (log_interval < 1) throw InvalidArgument("config: log_interval must be >= 1");
}

TrainConfig toy_scene_config() {
  TrainConfig c = TrainConfig::defaults(Experiment::bounded3d);
  c.iterations = 2000;
  c.batch_rays = 512;
  c.grid = HashGridConfig{3, 8, 1u << 14, 2, 4, 64};
  c.c2f_schedule.levels = 8;
  c.mlp.density_hidden = 32;
  c.mlp.color_hidden = 32;
  c.mlp.geo_features = 7;
  c.mlp.sh_degree = 2;
  c.samples_per_diagonal = 96;
  c.occupancy_resolution = 32;
  c.network_lr = LrSchedule::exponential(1e-2, 1e-3, 1);
  c.pose_lr = LrSchedule::exponential(6e-3, 1e-3, 1);
  c.log_interval = 10;
  return c;
}

double schedule_lr(const LrSchedule& s, const TrainConfig& c, int iter) {
  if (s.kind == LrSchedule::Kind::exponential_decay) {
    LrSchedule r = s;
    r.total_iters = c.iterations;
    return lr_at(r, iter);
  }
  return lr_at(s, iter);
}

float TrainConfig::march_step() const { return float((aabb_max - aabb_min).norm() / double(samples_per_diagonal)); }

float TrainConfig::effective_occupancy_threshold() const {
  return occupancy_threshold > 0.0 ? float(occupancy_threshold) : 0.01f / march_step();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("config: " + key + " expects a number, got '" + v + "'");
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("config: " + key + " expects an integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

Vec3 to_vec3(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != 3) throw InvalidArgument("config: " + key + " expects x,y,z");
  return Vec3(to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2]));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// "constant LR" | "exponential START END" | "warmup_step BASE PEAK WARMUP M1,M2,... FACTOR"
LrSchedule parse_schedule(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  std::vector<std::string> w;
  std::string tok;
  while (is >> tok) w.push_back(tok);
  if (w.empty()) throw InvalidArgument("config: " + key + " is empty");
  if (w[0] == "constant" && w.size() == 2) return LrSchedule::constant(to_double(key, w[1]));
  if (w[0] == "exponential" && w.size() == 3) {
    return LrSchedule::exponential(to_double(key, w[1]), to_double(key, w[2]), 1);
  }
  if (w[0] == "warmup_step" && (w.size() == 6 || w.size() == 5)) {
    std::vector<int> ms;
    const bool has_ms = w.size() == 6;
    if (has_ms && w[4] != "-") {
      for (const auto& m : split(w[4], ',')) ms.push_back(int(to_int(key, m)));
    }
    return LrSchedule::warmup_step(to_double(key, w[1]), to_double(key, w[2]), int(to_int(key, w[3])), ms,
                                   to_double(key, w[has_ms ? 5 : 4]));
  }
  throw InvalidArgument("config: cannot parse schedule '" + v + "' for " + key);
}

std::string schedule_text(const LrSchedule& s) {
  if (s.kind == LrSchedule::Kind::exponential_decay) return "exponential " + fmt(s.base_lr) + " " + fmt(s.final_lr);
  if (s.warmup_iters == 0 && s.milestones.empty() && s.base_lr == s.peak_lr) return "constant " + fmt(s.peak_lr);
  std::string ms;
  for (std::size_t i = 0; i < s.milestones.size(); ++i) ms += (i ? "," : "") + std::to_string(s.milestones[i]);
  if (ms.empty()) ms = "-";
  return "warmup_step " + fmt(s.base_lr) + " " + fmt(s.peak_lr) + " " + std::to_string(s.warmup_iters) + " " + ms +
         " " + fmt(s.decay_factor);
}

Rgb to_background(const std::string& key, const std::string& v) {
  if (v == "white") return {1.0f, 1.0f, 1.0f};
  if (v == "black") return {0.0f, 0.0f, 0.0f};
  const Vec3 c = to_vec3(key, v);
  return {float(c.x()), float(c.y()), float(c.z())};
}

} // namespace

void set_config_value(TrainConfig& c, const std::string& raw_key, const std::string& raw_value) {
  std::string key = trim(raw_key);
  std::replace(key.begin(), key.end(), '-', '_');
  const std::string v = trim(raw_value);
  const auto i32 = [&] { return int(to_int(key, v)); };
  if (key == "experiment") c.experiment = parse_experiment(v);
  else if (key == "iterations") c.iterations = i32();
  else if (key == "seed") c.seed = std::uint64_t(to_int(key, v));
  else if (key == "deterministic") c.deterministic = to_bool(key, v);
  else if (key == "batch_rays") c.batch_rays = i32();
  else if (key == "min_rays") c.min_rays = i32();
  else if (key == "max_rays") c.max_rays = i32();
  else if (key == "target_samples") c.target_samples = to_int(key, v);
  else if (key == "lr_network") c.network_lr = parse_schedule(key, v);
  else if (key == "lr_pose") c.pose_lr = parse_schedule(key, v);
  else if (key == "optimize_poses") c.optimize_poses = to_bool(key, v);
  else if (key == "pose_noise") c.pose_noise = to_double(key, v);
  else if (key == "c2f") c.c2f = parse_c2f_mode(v);
  else if (key == "c2f_start") c.c2f_schedule.start = to_double(key, v);
  else if (key == "c2f_end") c.c2f_schedule.end = to_double(key, v);
  else if (key == "grid_dim") c.grid.dim = i32();
  else if (key == "grid_levels") c.grid.levels = i32();
  else if (key == "grid_table_log2") {
    const int l = i32();
    if (l < 1 || l > 30) throw InvalidArgument("config: grid_table_log2 must be in [1, 30]");
    c.grid.table_size = 1u << l;
  } else if (key == "grid_features") c.grid.features = i32();
  else if (key == "grid_min_res") c.grid.base_resolution = std::uint32_t(i32());
  else if (key == "grid_max_res") c.grid.max_resolution = std::uint32_t(i32());
  else if (key == "density_hidden") c.mlp.density_hidden = i32();
  else if (key == "geo_features") c.mlp.geo_features = i32();
  else if (key == "color_hidden") c.mlp.color_hidden = i32();
  else if (key == "sh_degree") c.mlp.sh_degree = i32();
  else if (key == "aabb_min") c.aabb_min = to_vec3(key, v);
  else if (key == "aabb_max") c.aabb_max = to_vec3(key, v);
  else if (key == "samples_per_diagonal") c.samples_per_diagonal = i32();
  else if (key == "far_samples") c.far_samples = i32();
  else if (key == "far_radius") c.far_radius = to_double(key, v);
  else if (key == "background") c.background = to_background(key, v);
  else if (key == "occupancy_resolution") c.occupancy_resolution = i32();
  else if (key == "occupancy_interval") c.occupancy_interval = i32();
  else if (key == "occupancy_warmup") c.occupancy_warmup = i32();
  else if (key == "occupancy_decay") c.occupancy_decay = to_double(key, v);
  else if (key == "occupancy_threshold") c.occupancy_threshold = to_double(key, v);
  else if (key == "log_interval") c.log_interval = i32();
  else if (key == "patches") c.patches = i32();
  else if (key == "patch_half_size") c.patch_half_size = to_double(key, v);
  else if (key == "warp_translation") c.warp_translation = to_double(key, v);
  else if (key == "warp_noise") c.warp_noise = to_double(key, v);
  else if (key == "patch_batch") c.patch_batch = i32();
  else if (key == "image_size") c.image_size = i32();
  else if (key == "field_hidden") c.field_hidden = i32();
  else throw InvalidArgument("config: unknown key '" + key + "'");
  if (key == "grid_levels") c.c2f_schedule.levels = c.grid.levels;
}

TrainConfig parse_config_text(const std::string& text, TrainConfig base) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  const auto vec = [](const Vec3& v) { return fmt(v.x()) + "," + fmt(v.y()) + "," + fmt(v.z()); };
  os << "experiment = " << to_string(c.experiment) << '\n'
     << "iterations = " << c.iterations << '\n'
     << "seed = " << c.seed << '\n'
     << "deterministic = " << (c.deterministic ? "true" : "false") << '\n'
     << "batch_rays = " << c.batch_rays << '\n'
     << "min_rays = " << c.min_rays << '\n'
     << "max_rays = " << c.max_rays << '\n'
     << "target_samples = " << c.target_samples << '\n'
     << "lr_network = " << schedule_text(c.network_lr) << '\n'
     << "lr_pose = " << schedule_text(c.pose_lr) << '\n'
     << "optimize_poses = " << (c.optimize_poses ? "true" : "false") << '\n'
     << "pose_noise = " << fmt(c.pose_noise) << '\n'
     << "c2f = " << to_string(c.c2f) << '\n'
     << "c2f_start = " << fmt(c.c2f_schedule.start) << '\n'
     << "c2f_end = " << fmt(c.c2f_schedule.end) << '\n'
     << "grid_dim = " << c.grid.dim << '\n'
     << "grid_levels = " << c.grid.levels << '\n'
     << "grid_table_log2 = " << std::countr_zero(c.grid.table_size) << '\n'
     << "grid_features = " << c.grid.features << '\n'
     << "grid_min_res = " << c.grid.base_resolution << '\n'
     << "grid_max_res = " << c.grid.max_resolution << '\n'
     << "density_hidden = " << c.mlp.density_hidden << '\n'
     << "geo_features = " << c.mlp.geo_features << '\n'
     << "color_hidden = " << c.mlp.color_hidden << '\n'
     << "sh_degree = " << c.mlp.sh_degree << '\n'
     << "aabb_min = " << vec(c.aabb_min) << '\n'
     << "aabb_max = " << vec(c.aabb_max) << '\n'
     << "samples_per_diagonal = " << c.samples_per_diagonal << '\n'
     << "far_samples = " << c.far_samples << '\n'
     << "far_radius = " << fmt(c.far_radius) << '\n'
     << "background = " << fmt(c.background[0]) << "," << fmt(c.background[1]) << "," << fmt(c.background[2]) << '\n'
     << "occupancy_resolution = " << c.occupancy_resolution << '\n'
     << "occupancy_interval = " << c.occupancy_interval << '\n'
     << "occupancy_warmup = " << c.occupancy_warmup << '\n'
     << "occupancy_decay = " << fmt(c.occupancy_decay) << '\n'
     << "occupancy_threshold = " << fmt(c.occupancy_threshold) << '\n'
     << "log_interval = " << c.log_interval << '\n'
     << "patches = " << c.patches << '\n'
     << "patch_half_size = " << fmt(c.patch_half_size) << '\n'
     << "warp_translation = " << fmt(c.warp_translation) << '\n'
     << "warp_noise = " << fmt(c.warp_noise) << '\n'
     << "patch_batch = " << c.patch_batch << '\n'
     << "image_size = " << c.image_size << '\n'
     << "field_hidden = " << c.field_hidden << '\n';
  return os.str();
}

// --- state ---------------------------------------------------------------------

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix(splitmix(seed) ^ tag); }

Vec6 pose_vec(const std::vector<float>& p, std::size_t i) {
  Vec6 v;
  for (int k = 0; k < 6; ++k) v[k] = double(p[6 * i + std::size_t(k)]);
  return v;
}

} // namespace

Mat34 TrainState::pose(std::size_t i) const { return compose(se3_exp(pose_vec(pose_params, i)), init_poses.at(i)); }

std::vector<Mat34> TrainState::poses() const {
  std::vector<Mat34> out;
  for (std::size_t i = 0; i < camera_count(); ++i) out.push_back(pose(i));
  return out;
}

TrainState init_train_state(const TrainConfig& config, const DatasetBundle& data) {
  config.validate();
  if (config.experiment == Experiment::homography2d) {
    throw InvalidArgument("init_train_state: use run_homography_experiment for the planar experiment");
  }
  data.validate();
  TrainState s;
  s.config = config;
  s.config.c2f_schedule.levels = config.grid.levels;
  RadianceModel& m = s.model;
  if (config.experiment == Experiment::unbounded3d) {
    m.contraction.mode = ContractionMode::inverted_sphere;
    HashGridConfig far = config.grid;
    far.dim = 4;
    m.grid_far = HashGrid(far, sub_seed(config.seed, 2));
  } else {
    m.contraction.mode = ContractionMode::bounded_aabb;
  }
  m.contraction.aabb_min = config.aabb_min;
  m.contraction.aabb_max = config.aabb_max;
  m.grid = HashGrid(config.grid, sub_seed(config.seed, 1));
  FieldMlpConfig mc = config.mlp;
  mc.encoded_dim = m.grid.output_dim();
  m.mlp = FieldMLP(mc, sub_seed(config.seed, 3));
  m.validate();

  const std::size_t n = data.images.size();
  if (config.experiment == Experiment::bounded3d) {
    if (data.poses.size() != n) throw DataError("bounded pose refinement needs initial poses for every image");
    for (std::size_t i = 0; i < n; ++i) {
      const PoseSE3 noisy =
          perturb_pose(PoseSE3::from_matrix(data.poses[i]), config.pose_noise, sub_seed(config.seed, 1000 + i));
      s.init_poses.push_back(noisy.matrix());
    }
  } else {
    s.init_poses.assign(n, identity_pose());
  }
  s.pose_params.assign(6 * n, 0.0f);

  if (config.occupancy_resolution > 0) {
    Eigen::Vector3f lo, hi;
    occupancy_bounds(m, lo, hi);
    const float thr = config.effective_occupancy_threshold();
    s.occupancy = OccupancyGrid(config.occupancy_resolution, lo, hi, thr, 2.0f * thr);
  }
  s.adam_grid = AdamState(m.grid.param_count());
  s.adam_grid_far = AdamState(m.unbounded() ? m.grid_far.param_count() : 0);
  s.adam_mlp = AdamState(m.mlp.param_count());
  s.adam_pose = AdamState(s.pose_params.size());
  s.batch_rays = config.batch_rays;
  s.rng.seed(sub_seed(config.seed, 4));
  const std::size_t pixels = n * std::size_t(data.intrinsics.width) * std::size_t(data.intrinsics.height);
  if (pixels > std::size_t(UINT32_MAX)) throw InvalidArgument("dataset too large for the pixel sampler");
  s.order.resize(pixels);
  for (std::size_t i = 0; i < pixels; ++i) s.order[i] = std::uint32_t(i);
  s.cursor = pixels; // forces a shuffle on first use
  return s;
}

std::vector<PixelSample> sample_batch(TrainState& s, const DatasetBundle& data) {
  const std::uint32_t w = std::uint32_t(data.intrinsics.width);
  const std::uint32_t per_image = w * std::uint32_t(data.intrinsics.height);
  if (s.order.size() != std::size_t(per_image) * data.images.size()) {
    throw InvalidArgument("sample_batch: dataset does not match the training state");
  }
  std::vector<PixelSample> out;
  out.reserve(std::size_t(s.batch_rays));
  for (int i = 0; i < s.batch_rays; ++i) {
    if (s.cursor >= s.order.size()) {
      std::shuffle(s.order.begin(), s.order.end(), s.rng);
      s.cursor = 0;
    }
    const std::uint32_t id = s.order[s.cursor++];
    const std::uint32_t px = id % per_image;
    out.push_back(PixelSample{id / per_image, px % w, px / w});
  }
  return out;
}

double c2f_alpha_at(const TrainConfig& config, int iteration) {
  C2FSchedule sch = config.c2f_schedule;
  sch.levels = config.grid.levels;
  return c2f_alpha(sch, double(iteration) / double(config.iterations));
}

RenderSettings render_settings(const TrainState& s, bool training) {
  RenderSettings r;
  r.step = s.config.march_step();
  r.far_samples = s.config.far_samples;
  r.far_radius = float(s.config.far_radius);
  r.background = s.config.background;
  r.min_transmittance = training ? 0.0f : 1e-4f;
  r.c2f = s.config.c2f;
  r.c2f_alpha = c2f_alpha_at(s.config, s.iteration);
  return r;
}

namespace {

struct CameraFrame {
  Mat34 init;
  Mat34 pose;
  Mat12x6 jacobian; // of the world-frame correction
};

CameraFrame camera_frame(const TrainState& s, std::size_t i) {
  CameraFrame f;
  const Mat34 corr = se3_exp(pose_vec(s.pose_params, i), f.jacobian);
  f.init = s.init_poses[i];
  f.pose = compose(corr, f.init);
  return f;
}

std::vector<Ray> batch_rays(const TrainState& s, const DatasetBundle& data, std::span<const PixelSample> batch,
                            const std::vector<CameraFrame>& frames, std::vector<Vec3>* cam_dirs) {
  std::vector<Ray> rays;
  rays.reserve(batch.size());
  if (cam_dirs) cam_dirs->clear();
  for (const PixelSample& p : batch) {
    if (p.image >= s.camera_count()) throw InvalidArgument("batch: image index out of range");
    const Vec3 n = camera_direction(data.intrinsics, p.u, p.v);
    const Mat34& pose = frames[p.image].pose;
    const Vec3 d = (pose.leftCols<3>() * n).normalized();
    rays.push_back(Ray{pose.col(3).cast<float>(), d.cast<float>()});
    if (cam_dirs) cam_dirs->push_back(n.normalized());
  }
  return rays;
}

std::vector<CameraFrame> all_frames(const TrainState& s) {
  std::vector<CameraFrame> frames;
  for (std::size_t i = 0; i < s.camera_count(); ++i) frames.push_back(camera_frame(s, i));
  return frames;
}

const OccupancyGrid* active_occupancy(const TrainState& s) {
  if (s.config.occupancy_resolution <= 0 || s.iteration < s.config.occupancy_warmup) return nullptr;
  return &s.occupancy;
}

float target_value(const DatasetBundle& data, const PixelSample& p, int c) {
  return data.images[p.image].at(int(p.u), int(p.v), c);
}

} // namespace

void compute_batch_gradients(const TrainState& s, const DatasetBundle& data, std::span<const PixelSample> batch,
                             BatchGradients& out) {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");
  const RenderSettings settings = render_settings(s, true);
  const std::vector<CameraFrame> frames = all_frames(s);
  std::vector<Vec3> cam_dirs;
  const std::vector<Ray> rays = batch_rays(s, data, batch, frames, &cam_dirs);

  static thread_local BatchRenderer renderer;
  renderer.forward(s.model, rays, settings, active_occupancy(s));

  const std::size_t r_count = rays.size();
  const auto colors = renderer.colors();
  double loss = 0.0;
  std::vector<float> grad_rgb(r_count * 3);
  const double scale = 2.0 / double(r_count * 3);
  for (std::size_t r = 0; r < r_count; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double diff = double(colors[3 * r + std::size_t(c)]) - double(target_value(data, batch[r], c));
      loss += diff * diff;
      grad_rgb[3 * r + std::size_t(c)] = float(scale * diff);
    }
  }
  out.loss = loss / double(r_count * 3);
  out.samples = std::int64_t(renderer.sample_count());
  out.model.resize_for(s.model);
  out.pose.assign(s.pose_params.size(), 0.0);
  if (!std::isfinite(out.loss)) return;

  const bool want_pose = s.config.optimize_poses;
  std::vector<float> g_origin, g_dir;
  if (want_pose) {
    g_origin.assign(r_count * 3, 0.0f);
    g_dir.assign(r_count * 3, 0.0f);
  }
  renderer.backward(s.model, grad_rgb, out.model, g_origin, g_dir);
  if (!want_pose) return;
  for (std::size_t r = 0; r < r_count; ++r) {
    const std::size_t cam = batch[r].image;
    const CameraFrame& f = frames[cam];
    // origin = Rc t0 + tc, direction = Rc R0 n with (Rc, tc) the correction
    const Vec3 a(g_origin[3 * r], g_origin[3 * r + 1], g_origin[3 * r + 2]);
    const Vec3 b(g_dir[3 * r], g_dir[3 * r + 1], g_dir[3 * r + 2]);
    const Vec3 d0 = f.init.leftCols<3>() * cam_dirs[r];
    const Vec3 t0 = f.init.col(3);
    for (int k = 0; k < 6; ++k) {
      double g = 0.0;
      for (int row = 0; row < 3; ++row) {
        g += a[row] * f.jacobian(row * 4 + 3, k);
        for (int col = 0; col < 3; ++col) g += (b[row] * d0[col] + a[row] * t0[col]) * f.jacobian(row * 4 + col, k);
      }
      out.pose[6 * cam + std::size_t(k)] += g;
    }
  }
}

double train_step(TrainState& s, const DatasetBundle& data, std::span<const PixelSample> batch) {
  const TrainConfig& cfg = s.config;
  const int it = s.iteration;
  static thread_local BatchGradients g;
  compute_batch_gradients(s, data, batch, g);
  const double loss = g.loss;
  if (!std::isfinite(loss)) {
    throw TrainingDiverged("non-finite loss at iteration " + std::to_string(it));
  }
  if (std::isnan(s.initial_loss)) s.initial_loss = loss;
  s.blowup_steps = (loss > 1e3 * s.initial_loss) ? s.blowup_steps + 1 : 0;
  if (s.blowup_steps >= 100) {
    std::ostringstream os;
    os << "loss above 1000x its initial value (" << s.initial_loss << ") for 100 steps; last " << loss
       << " at iteration " << it;
    throw TrainingDiverged(os.str());
  }

  const float lr_net = float(schedule_lr(cfg.network_lr, cfg, it));
  const float lr_pose = float(schedule_lr(cfg.pose_lr, cfg, it));
  adam_step(s.model.grid.params(), g.model.grid, s.adam_grid, lr_net);
  if (s.model.unbounded()) adam_step(s.model.grid_far.params(), g.model.grid_far, s.adam_grid_far, lr_net);
  adam_step(s.model.mlp.params(), g.model.mlp, s.adam_mlp, lr_net);
  if (cfg.optimize_poses) {
    std::vector<float> pg(g.pose.begin(), g.pose.end());
    adam_step(s.pose_params, pg, s.adam_pose, lr_pose);
  }

  if (cfg.occupancy_resolution > 0 && (it + 1) % cfg.occupancy_interval == 0) {
    update_occupancy(s.occupancy, make_density_fn(s.model, cfg.c2f, c2f_alpha_at(cfg, it)),
                     float(cfg.occupancy_decay), sub_seed(cfg.seed, 0x0cc0000000ull + std::uint64_t(it)));
  }
  s.last_samples = g.samples;
  if (cfg.target_samples > 0) {
    s.batch_rays = dynamic_batch_size(s.batch_rays, s.last_samples, cfg.target_samples, cfg.min_rays, cfg.max_rays);
  }
  s.loss_history.push_back(loss);
  ++s.iteration;
  return loss;
}

double train_step(TrainState& s, const DatasetBundle& data) {
  const std::vector<PixelSample> batch = sample_batch(s, data);
  return train_step(s, data, batch);
}

double reference_batch_loss(const TrainState& s, const DatasetBundle& data, std::span<const PixelSample> batch) {
  const RenderSettings settings = render_settings(s, true);
  const std::vector<CameraFrame> frames = all_frames(s);
  const std::vector<Ray> rays = batch_rays(s, data, batch, frames, nullptr);
  double loss = 0.0;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const CompositeResult c = render_ray_reference(s.model, rays[r], settings, active_occupancy(s));
    for (int ch = 0; ch < 3; ++ch) {
      const double d = double(c.rgb[std::size_t(ch)]) - double(target_value(data, batch[r], ch));
      loss += d * d;
    }
  }
  return loss / double(rays.size() * 3);
}

std::uint64_t parameter_hash(const TrainState& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto mix = [&](std::span<const float> xs) {
    for (float x : xs) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ull;
      }
    }
  };
  mix(s.model.grid.params());
  if (s.model.unbounded()) mix(s.model.grid_far.params());
  mix(s.model.mlp.params());
  mix(s.pose_params);
  return h;
}

// --- checkpoint ------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'B', 'A', 'A', 'N', 'G', 'P', 'C', 'K'};

void write_section(std::ostream& os, const char (&tag)[5], const std::string& payload) {
  binio::write_tag(os, tag);
  binio::write_u64(os, payload.size());
  os.write(payload.data(), std::streamsize(payload.size()));
}

void write_adam(std::ostream& os, const AdamState& a) {
  binio::write_f32_vector(os, a.first_moment);
  binio::write_f32_vector(os, a.second_moment);
  binio::write_i64(os, a.step);
  binio::write_f32(os, a.beta1);
  binio::write_f32(os, a.beta2);
  binio::write_f32(os, a.epsilon);
}

AdamState read_adam(std::istream& is) {
  AdamState a;
  a.first_moment = binio::read_f32_vector(is);
  a.second_moment = binio::read_f32_vector(is);
  a.step = binio::read_i64(is);
  a.beta1 = binio::read_f32(is);
  a.beta2 = binio::read_f32(is);
  a.epsilon = binio::read_f32(is);
  if (a.first_moment.size() != a.second_moment.size()) throw DataError("checkpoint: adam moments differ in length");
  return a;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& s) {
  std::ostringstream conf, grid, mlp, pose, adam, occ, rngs, iter;
  binio::write_string(conf, config_to_text(s.config));

  binio::write_u32(grid, s.model.unbounded() ? 2 : 1);
  s.model.grid.save(grid);
  if (s.model.unbounded()) s.model.grid_far.save(grid);

  s.model.mlp.save(mlp);

  binio::write_u64(pose, s.init_poses.size());
  for (const Mat34& m : s.init_poses)
    for (int i = 0; i < 12; ++i) binio::write_f64(pose, m(i / 4, i % 4));
  binio::write_f32_vector(pose, s.pose_params);

  write_adam(adam, s.adam_grid);
  write_adam(adam, s.adam_grid_far);
  write_adam(adam, s.adam_mlp);
  write_adam(adam, s.adam_pose);

  binio::write_u32(occ, s.occupancy.resolution > 0 ? 1 : 0);
  if (s.occupancy.resolution > 0) s.occupancy.save(occ);

  std::ostringstream engine;
  engine << s.rng;
  binio::write_string(rngs, engine.str());
  binio::write_u64(rngs, s.order.size());
  for (std::uint32_t v : s.order) binio::write_u32(rngs, v);
  binio::write_u64(rngs, s.cursor);

  binio::write_i64(iter, s.iteration);
  binio::write_i64(iter, s.batch_rays);
  binio::write_i64(iter, s.last_samples);
  binio::write_f64(iter, s.initial_loss);
  binio::write_i64(iter, s.blowup_steps);
  binio::write_u64(iter, s.loss_history.size());
  for (double l : s.loss_history) binio::write_f64(iter, l);

  atomic_write_file(path, [&](const std::filesystem::path& tmp) {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, 8);
    binio::write_u32(os, 1);
    write_section(os, "CONF", conf.str());
    write_section(os, "GRID", grid.str());
    write_section(os, "MLPW", mlp.str());
    write_section(os, "POSE", pose.str());
    write_section(os, "ADAM", adam.str());
    write_section(os, "OCCG", occ.str());
    write_section(os, "RNGS", rngs.str());
    write_section(os, "ITER", iter.str());
    os.flush();
    if (!os) throw DataError("checkpoint write failed: " + tmp.string());
  });
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  binio::read_exact(is, magic, 8);
  if (!std::equal(magic, magic + 8, kMagic)) throw DataError(path.string() + ": not a checkpoint");
  if (binio::read_u32(is) != 1) throw DataError(path.string() + ": unsupported checkpoint version");
  std::map<std::string, std::string> sections;
  while (is.peek() != std::char_traits<char>::eof()) {
    char tag[4];
    binio::read_exact(is, tag, 4);
    const std::uint64_t len = binio::read_u64(is);
    if (len > (std::uint64_t(1) << 36)) throw DataError(path.string() + ": section too large");
    std::string payload(len, '\0');
    binio::read_exact(is, payload.data(), len);
    sections[std::string(tag, 4)] = std::move(payload);
  }
  const auto section = [&](const char* tag) {
    const auto it = sections.find(tag);
    if (it == sections.end()) throw DataError(path.string() + ": missing section " + tag);
    return std::istringstream(it->second);
  };

  TrainState s;
  {
    auto in = section("CONF");
    s.config = parse_config_text(binio::read_string(in), TrainConfig{});
    s.config.c2f_schedule.levels = s.config.grid.levels;
  }
  RadianceModel& m = s.model;
  m.contraction.mode = s.config.experiment == Experiment::unbounded3d ? ContractionMode::inverted_sphere
                                                                       : ContractionMode::bounded_aabb;
  m.contraction.aabb_min = s.config.aabb_min;
  m.contraction.aabb_max = s.config.aabb_max;
  {
    auto in = section("GRID");
    const std::uint32_t count = binio::read_u32(in);
    m.grid = HashGrid::load(in);
    if (count == 2) m.grid_far = HashGrid::load(in);
  }
  {
    auto in = section("MLPW");
    m.mlp = FieldMLP::load(in);
  }
  m.validate();
  {
    auto in = section("POSE");
    const std::uint64_t n = binio::read_u64(in);
    if (n > (1u << 24)) throw DataError("checkpoint: too many cameras");
    for (std::uint64_t c = 0; c < n; ++c) {
      Mat34 p;
      for (int i = 0; i < 12; ++i) p(i / 4, i % 4) = binio::read_f64(in);
      s.init_poses.push_back(p);
    }
    s.pose_params = binio::read_f32_vector(in);
    if (s.pose_params.size() != 6 * n) throw DataError("checkpoint: pose parameter count mismatch");
  }
  {
    auto in = section("ADAM");
    s.adam_grid = read_adam(in);
    s.adam_grid_far = read_adam(in);
    s.adam_mlp = read_adam(in);
    s.adam_pose = read_adam(in);
  }
  {
    auto in = section("OCCG");
    if (binio::read_u32(in) == 1) s.occupancy = OccupancyGrid::load(in);
  }
  {
    auto in = section("RNGS");
    std::istringstream engine(binio::read_string(in));
    engine >> s.rng;
    if (!engine) throw DataError("checkpoint: bad RNG state");
    const std::uint64_t n = binio::read_u64(in);
    if (n > (std::uint64_t(1) << 32)) throw DataError("checkpoint: sampler too large");
    s.order.resize(n);
    for (auto& v : s.order) v = binio::read_u32(in);
    s.cursor = binio::read_u64(in);
  }
  {
    auto in = section("ITER");
    s.iteration = int(binio::read_i64(in));
    s.batch_rays = int(binio::read_i64(in));
    s.last_samples = binio::read_i64(in);
    s.initial_loss = binio::read_f64(in);
    s.blowup_steps = int(binio::read_i64(in));
    const std::uint64_t n = binio::read_u64(in);
    if (n > (std::uint64_t(1) << 32)) throw DataError("checkpoint: loss history too long");
    s.loss_history.resize(n);
    for (double& l : s.loss_history) l = binio::read_f64(in);
  }
  if (s.adam_grid.first_moment.size() != m.grid.param_count() ||
      s.adam_mlp.first_moment.size() != m.mlp.param_count() || s.adam_pose.first_moment.size() != s.pose_params.size()) {
    throw DataError("checkpoint: optimizer state does not match parameters");
  }
  return s;
}

// --- traces and evaluation ----------------------------------------------------------

std::string trace_csv_header() {
  return "iteration,loss,lr_network,lr_pose,rays,samples,rotation_error_deg,translation_error\n";
}

std::string trace_csv_row(const TraceRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%d,%lld,%.9g,%.9g\n", r.iteration, r.loss, r.lr_network,
                r.lr_pose, r.rays, static_cast<long long>(r.samples), r.rotation_error_deg, r.translation_error);
  return buf;
}

PoseErrorReport evaluate_poses(const std::vector<Mat34>& estimated, const std::vector<Mat34>& ground_truth) {
  try {
    return procrustes_align(estimated, ground_truth);
  } catch (const DegenerateConfiguration&) {
    return pose_errors(estimated, ground_truth);
  }
}

TestEvaluation evaluate_test_views(const TrainState& s, const DatasetBundle& test, const Similarity& alignment) {
  if (test.poses.size() != test.images.size()) throw DataError("test split needs ground-truth poses");
  TestEvaluation out;
  const Similarity inv = alignment.inverse();
  const RenderSettings settings = render_settings(s, false);
  const OccupancyGrid* occ = active_occupancy(s);
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    const Mat34 pose = inv.apply(test.poses[i]);
    Image img(test.intrinsics.width, test.intrinsics.height, 3);
    img.data = render_image(s.model, test.intrinsics, pose, settings, occ);
    ViewMetrics v;
    v.psnr = psnr(img, test.images[i]);
    v.ssim = ssim(img, test.images[i]);
    const int need = ms_ssim_min_size(int(default_ms_ssim_weights().size()));
    if (img.width >= need && img.height >= need) v.ms_ssim = ms_ssim(img, test.images[i]);
    out.per_view.push_back(v);
    out.renders.push_back(std::move(img));
  }
  if (!out.per_view.empty()) {
    out.mean = ViewMetrics{0.0, 0.0, 0.0};
    for (const ViewMetrics& v : out.per_view) {
      out.mean.psnr += v.psnr;
      out.mean.ssim += v.ssim;
      out.mean.ms_ssim += v.ms_ssim;
    }
    const double n = double(out.per_view.size());
    out.mean.psnr /= n;
    out.mean.ssim /= n;
    out.mean.ms_ssim /= n;
  }
  return out;
}

PoseRefinementResult run_pose_refinement(const DatasetBundle& train, const DatasetBundle* test,
                                         const TrainConfig& config,
                                         const std::function<void(const TraceRow&)>& on_row) {
  PoseRefinementResult res;
  res.state = init_train_state(config, train);
  TrainState& s = res.state;
  const bool have_gt = train.poses.size() == train.images.size();
  if (have_gt) res.initial_errors = evaluate_poses(s.poses(), train.poses);
  while (s.iteration < config.iterations) {
    const int it = s.iteration;
    const int rays = s.batch_rays;
    const double loss = train_step(s, train);
    if (it % config.log_interval == 0 || s.iteration == config.iterations) {
      TraceRow row;
      row.iteration = it;
      row.loss = loss;
      row.lr_network = schedule_lr(config.network_lr, config, it);
      row.lr_pose = config.optimize_poses ? schedule_lr(config.pose_lr, config, it) : 0.0;
      row.rays = rays;
      row.samples = s.last_samples;
      if (have_gt) {
        const PoseErrorReport e = evaluate_poses(s.poses(), train.poses);
        row.rotation_error_deg = e.mean_rotation_deg;
        row.translation_error = e.mean_translation;
      }
      if (on_row) on_row(row);
      res.trace.push_back(row);
    }
  }
  if (have_gt) res.final_errors = evaluate_poses(s.poses(), train.poses);
  if (test) res.test = evaluate_test_views(s, *test, res.final_errors.alignment);
  return res;
}

} // namespace baangp
