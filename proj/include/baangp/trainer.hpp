#pragma once

// Joint optimisation of a radiance field (or 2D color field) and camera
// poses (or planar warps).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "baangp/field.hpp"
#include "baangp/hashgrid.hpp"
#include "baangp/io.hpp"
#include "baangp/metrics.hpp"
#include "baangp/optim.hpp"
#include "baangp/renderer.hpp"
#include "baangp/schedule.hpp"

namespace baangp {

enum class Experiment { homography2d, bounded3d, unbounded3d };

Experiment parse_experiment(const std::string& name);
std::string to_string(Experiment e);

struct TrainConfig {
  Experiment experiment = Experiment::bounded3d;
  int iterations = 20000;
  std::uint64_t seed = 1;
  bool deterministic = true;

  // rays per step; target_samples > 0 turns on dynamic batch sizing
  int batch_rays = 1024;
  int min_rays = 64;
  int max_rays = 1 << 16;
  std::int64_t target_samples = 0;

  LrSchedule network_lr = LrSchedule::exponential(1e-2, 1e-4, 20000);
  LrSchedule pose_lr = LrSchedule::exponential(1e-3, 1e-5, 20000);
  bool optimize_poses = true;
  double pose_noise = 0.15;

  C2FMode c2f = C2FMode::substitution;
  C2FSchedule c2f_schedule{0.1, 0.5, 16};

  HashGridConfig grid{3, 16, 1u << 14, 2, 14, 4069};
  FieldMlpConfig mlp{};

  Vec3 aabb_min = Vec3::Constant(-1.0);
  Vec3 aabb_max = Vec3::Constant(1.0);
  int samples_per_diagonal = 256;
  int far_samples = 32;
  double far_radius = 1e3;
  Rgb background{1.0f, 1.0f, 1.0f};

  int occupancy_resolution = 128;
  int occupancy_interval = 16;
  int occupancy_warmup = 256;
  double occupancy_decay = 0.95;
  double occupancy_threshold = 0.0; // 0: 0.01 / step

  int log_interval = 100;

  // planar warp experiment
  int patches = 5;
  double patch_half_size = 0.35;
  double warp_translation = 0.2;
  double warp_noise = 0.1;
  int patch_batch = 1024; // pixels per patch per step
  int image_size = 256;
  int field_hidden = 64;

  static TrainConfig defaults(Experiment e);
  void validate() const;
  float march_step() const;
  float effective_occupancy_threshold() const;
};

// Settings sized for the 64x64 procedural blob scene.
TrainConfig toy_scene_config();

// Learning rate at `iter`; exponential schedules span config.iterations.
double schedule_lr(const LrSchedule& schedule, const TrainConfig& config, int iter);

// Flat "key = value" text. Unknown keys and malformed values throw InvalidArgument.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
TrainConfig parse_config_text(const std::string& text, TrainConfig base);
std::string config_to_text(const TrainConfig& config);

struct PixelSample {
  std::uint32_t image = 0;
  std::uint32_t u = 0;
  std::uint32_t v = 0;
};

struct TrainState {
  TrainConfig config;
  RadianceModel model;
  // Camera i is exp(pose_params[6i .. 6i+6]) * init_poses[i] (world-frame correction).
  std::vector<Mat34> init_poses;
  std::vector<float> pose_params;
  OccupancyGrid occupancy;
  AdamState adam_grid, adam_grid_far, adam_mlp, adam_pose;
  int iteration = 0;
  int batch_rays = 0;
  std::int64_t last_samples = 0;
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  int blowup_steps = 0;
  std::vector<double> loss_history;

  std::mt19937_64 rng;
  std::vector<std::uint32_t> order;
  std::size_t cursor = 0;

  std::size_t camera_count() const { return init_poses.size(); }
  Mat34 pose(std::size_t camera) const;
  std::vector<Mat34> poses() const;
};

// Builds the model and perturbs (bounded) or resets to identity (unbounded) the poses.
TrainState init_train_state(const TrainConfig& config, const DatasetBundle& data);

// Next batch from a per-epoch shuffle of every training pixel.
std::vector<PixelSample> sample_batch(TrainState& state, const DatasetBundle& data);

RenderSettings render_settings(const TrainState& state, bool training);
double c2f_alpha_at(const TrainConfig& config, int iteration);

struct BatchGradients {
  double loss = 0.0;
  std::int64_t samples = 0;
  ModelGradients model;
  std::vector<double> pose; // 6 per camera
};

// Loss and gradients of the batch at the current state; parameters untouched.
// Gradients are left zero when the loss is not finite.
void compute_batch_gradients(const TrainState& state, const DatasetBundle& data, std::span<const PixelSample> batch,
                             BatchGradients& out);

// One optimisation step on the given pixels; returns the mean squared color error.
// Throws TrainingDiverged (before touching parameters) on a non-finite loss.
double train_step(TrainState& state, const DatasetBundle& data, std::span<const PixelSample> batch);
double train_step(TrainState& state, const DatasetBundle& data);

// Loss of the batch at the current state through the sample-by-sample reference path.
double reference_batch_loss(const TrainState& state, const DatasetBundle& data, std::span<const PixelSample> batch);

// FNV-1a over grid tables, decoder weights and pose parameters.
std::uint64_t parameter_hash(const TrainState& state);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

struct TraceRow {
  int iteration = 0;
  double loss = 0.0;
  double lr_network = 0.0;
  double lr_pose = 0.0;
  int rays = 0;
  std::int64_t samples = 0;
  double rotation_error_deg = 0.0;
  double translation_error = 0.0;
};

std::string trace_csv_header();
std::string trace_csv_row(const TraceRow& row);

// Pose errors after Procrustes alignment; falls back to unaligned errors when
// alignment is degenerate.
PoseErrorReport evaluate_poses(const std::vector<Mat34>& estimated, const std::vector<Mat34>& ground_truth);

struct ViewMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = std::numeric_limits<double>::quiet_NaN(); // NaN when images are too small
};

struct TestEvaluation {
  std::vector<Image> renders;
  std::vector<ViewMetrics> per_view;
  ViewMetrics mean;
};

// Renders the test cameras moved into the learned frame by `alignment.inverse()`.
TestEvaluation evaluate_test_views(const TrainState& state, const DatasetBundle& test, const Similarity& alignment);

struct PoseRefinementResult {
  TrainState state;
  PoseErrorReport initial_errors;
  PoseErrorReport final_errors;
  std::vector<TraceRow> trace;
  std::optional<TestEvaluation> test;
};

PoseRefinementResult run_pose_refinement(const DatasetBundle& train, const DatasetBundle* test,
                                         const TrainConfig& config,
                                         const std::function<void(const TraceRow&)>& on_row = {});

} // namespace baangp
