// baangp: command-line front end.
//
//   baangp train --data DIR [--test-split test] [--config FILE] [--set key=value]... [--seed N]
//   baangp train --toy ...                 (procedural blob scene, generated in memory)
//   baangp render --checkpoint FILE --poses FILE --data DIR | --width W --height H --fov RAD
//   baangp eval --estimated FILE --ground-truth FILE|DIR [--renders DIR --data DIR]
//   baangp homography [--image PNG] [--c2f MODE] [--seed N] [--iterations N]
//   baangp make-toy-scene [--seed N] [--views N]
//
// Outputs go to --out, else $BAANGP_OUT_DIR, else ./baangp_out.
// Exit codes: 0 ok, 1 usage, 2 data, 3 training diverged.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "baangp/error.hpp"
#include "baangp/homography.hpp"
#include "baangp/io.hpp"
#include "baangp/metrics.hpp"
#include "baangp/toy_scene.hpp"
#include "baangp/trainer.hpp"

namespace fs = std::filesystem;
using namespace baangp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

fs::path output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("BAANGP_OUT_DIR"); env && *env) return env;
  return "baangp_out";
}

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::int64_t seed = -1;
  int iterations = 0;
  std::string c2f;
  std::string contraction;
  bool deterministic = true;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.file, "key = value config file");
  cmd->add_option("--set", f.sets, "override one config key (key=value), repeatable");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--iterations", f.iterations, "optimisation steps");
  cmd->add_option("--c2f", f.c2f, "coarse-to-fine mode: off, vanilla, substitution");
  cmd->add_flag("--deterministic,!--no-deterministic", f.deterministic,
                "single-threaded reproducible execution (the only mode implemented)");
}

TrainConfig build_config(TrainConfig base, const ConfigFlags& f) {
  if (!f.file.empty()) base = parse_config_text(read_text_file(f.file), base);
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    set_config_value(base, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed >= 0) base.seed = std::uint64_t(f.seed);
  if (f.iterations > 0) base.iterations = f.iterations;
  if (!f.c2f.empty()) base.c2f = parse_c2f_mode(f.c2f);
  if (!f.contraction.empty()) {
    if (f.contraction == "inverted-sphere" || f.contraction == "inverted_sphere") {
      base.experiment = Experiment::unbounded3d;
    } else if (f.contraction == "aabb" || f.contraction == "bounded") {
      base.experiment = Experiment::bounded3d;
    } else {
      throw InvalidArgument("--contraction expects aabb or inverted-sphere");
    }
  }
  base.deterministic = f.deterministic;
  base.validate();
  return base;
}

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "n/a";
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string metrics_table(const std::string& scene, double rot, double trans, double psnr_v, double ssim_v,
                          double ms_v) {
  std::ostringstream os;
  os << "scene\trotation_deg\ttranslation\tpsnr\tssim\tms_ssim\tlpips\n"
     << scene << '\t' << fmt_metric(rot) << '\t' << fmt_metric(trans) << '\t' << fmt_metric(psnr_v) << '\t'
     << fmt_metric(ssim_v) << '\t' << fmt_metric(ms_v) << "\tn/a\n";
  return os.str();
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags cfg;
  std::string data;
  std::string train_split = "train";
  std::string test_split = "test";
  bool toy = false;
  std::uint64_t toy_seed = 7;
  std::string out;
  std::string resume;
  int checkpoint_every = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  DatasetBundle train, test;
  bool have_test = false;
  TrainConfig base = a.toy ? toy_scene_config() : TrainConfig::defaults(Experiment::bounded3d);
  if (a.toy) {
    ToySceneOptions o;
    o.seed = a.toy_seed;
    ToyScene scene = make_toy_scene(o);
    train = std::move(scene.train);
    test = std::move(scene.test);
    have_test = true;
  } else {
    if (a.data.empty()) throw InvalidArgument("train: --data DIR or --toy is required");
    train = load_blender_dataset(a.data, a.train_split);
    if (fs::exists(fs::path(a.data) / ("transforms_" + a.test_split + ".json"))) {
      test = load_blender_dataset(a.data, a.test_split);
      have_test = true;
    }
  }
  TrainConfig config = build_config(base, a.cfg);
  if (config.experiment == Experiment::homography2d) throw InvalidArgument("train: use the homography subcommand");
  const fs::path out = output_dir(a.out);
  fs::create_directories(out);

  TrainState state = a.resume.empty() ? init_train_state(config, train) : load_checkpoint(a.resume);
  if (!a.resume.empty()) config = state.config;
  const bool have_gt = train.poses.size() == train.images.size();
  std::string csv = trace_csv_header();
  const PoseErrorReport initial = have_gt ? evaluate_poses(state.poses(), train.poses) : PoseErrorReport{};
  write_pose_file(out / "poses_initial.txt", state.poses());

  int status = kExitOk;
  std::string diverged;
  try {
    while (state.iteration < config.iterations) {
      const int it = state.iteration;
      const int rays = state.batch_rays;
      const double loss = train_step(state, train);
      if (it % config.log_interval == 0 || state.iteration == config.iterations) {
        TraceRow row;
        row.iteration = it;
        row.loss = loss;
        row.lr_network = schedule_lr(config.network_lr, config, it);
        row.lr_pose = config.optimize_poses ? schedule_lr(config.pose_lr, config, it) : 0.0;
        row.rays = rays;
        row.samples = state.last_samples;
        if (have_gt) {
          const PoseErrorReport e = evaluate_poses(state.poses(), train.poses);
          row.rotation_error_deg = e.mean_rotation_deg;
          row.translation_error = e.mean_translation;
        }
        csv += trace_csv_row(row);
        if (!a.quiet) {
          std::fprintf(stderr, "iter %6d  loss %.6f  rot %.4f deg\n", it, loss, row.rotation_error_deg);
        }
      }
      if (a.checkpoint_every > 0 && state.iteration % a.checkpoint_every == 0) {
        save_checkpoint(out / "checkpoint.bin", state);
        atomic_write_text(out / "trace.csv", csv);
      }
    }
  } catch (const TrainingDiverged& e) {
    diverged = e.what();
    status = kExitDiverged;
  }
  atomic_write_text(out / "trace.csv", csv);
  save_checkpoint(out / "checkpoint.bin", state);
  write_pose_file(out / "poses_estimated.txt", state.poses());
  if (status != kExitOk) {
    std::cerr << "training diverged: " << diverged << '\n';
    return status;
  }

  double rot = NAN, trans = NAN;
  Similarity align;
  if (have_gt) {
    const PoseErrorReport fin = evaluate_poses(state.poses(), train.poses);
    rot = fin.mean_rotation_deg;
    trans = fin.mean_translation;
    align = fin.alignment;
    std::cerr << "rotation error " << initial.mean_rotation_deg << " -> " << rot << " deg, translation "
              << initial.mean_translation << " -> " << trans << '\n';
  }
  double p = NAN, s = NAN, m = NAN;
  if (have_test) {
    const TestEvaluation ev = evaluate_test_views(state, test, align);
    for (std::size_t i = 0; i < ev.renders.size(); ++i) {
      write_png(out / "test" / ("r_" + std::to_string(i) + ".png"), ev.renders[i]);
    }
    p = ev.mean.psnr;
    s = ev.mean.ssim;
    m = ev.mean.ms_ssim;
  }
  const std::string table = metrics_table(a.toy ? "toy" : train.name, rot, trans, p, s, m);
  atomic_write_text(out / "metrics.tsv", table);
  std::cout << table;
  return kExitOk;
}

// --- render --------------------------------------------------------------------

struct RenderArgs {
  std::string checkpoint;
  std::string poses;
  std::string data;
  std::string split = "test";
  int width = 0;
  int height = 0;
  double fov = 0.0;
  std::string out;
};

int cmd_render(const RenderArgs& a) {
  const TrainState state = load_checkpoint(a.checkpoint);
  CameraIntrinsics intr;
  std::vector<Mat34> poses;
  if (!a.data.empty()) {
    const DatasetBundle d = load_blender_dataset(a.data, a.split);
    intr = d.intrinsics;
    poses = d.poses;
  } else {
    if (a.width <= 0 || a.height <= 0 || !(a.fov > 0.0)) {
      throw InvalidArgument("render: give --data DIR or --width, --height and --fov");
    }
    intr = CameraIntrinsics::from_fov_x(a.width, a.height, a.fov);
  }
  if (!a.poses.empty()) poses = read_pose_file(a.poses);
  if (poses.empty()) throw InvalidArgument("render: no poses to render");
  const fs::path out = output_dir(a.out);
  const RenderSettings settings = render_settings(state, false);
  const OccupancyGrid* occ = state.occupancy.resolution > 0 ? &state.occupancy : nullptr;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    Image img(intr.width, intr.height, 3);
    img.data = render_image(state.model, intr, poses[i], settings, occ);
    const fs::path file = out / ("render_" + std::to_string(i) + ".png");
    write_png(file, img);
    std::cout << file.string() << '\n';
  }
  return kExitOk;
}

// --- eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string estimated;
  std::string ground_truth;
  std::string split = "train";
  std::string renders;
  std::string data;
  std::string test_split = "test";
  std::string out;
};

std::vector<Mat34> load_poses(const std::string& path, const std::string& split) {
  if (fs::is_directory(path)) return load_blender_dataset(path, split).poses;
  return read_pose_file(path);
}

int cmd_eval(const EvalArgs& a) {
  double rot = NAN, trans = NAN;
  if (!a.estimated.empty() || !a.ground_truth.empty()) {
    if (a.estimated.empty() || a.ground_truth.empty()) {
      throw InvalidArgument("eval: --estimated and --ground-truth go together");
    }
    const auto est = load_poses(a.estimated, a.split);
    const auto gt = load_poses(a.ground_truth, a.split);
    if (est.size() != gt.size()) throw DataError("eval: pose counts differ");
    const PoseErrorReport r = evaluate_poses(est, gt);
    rot = r.mean_rotation_deg;
    trans = r.mean_translation;
  }
  double p = NAN, s = NAN, m = NAN;
  if (!a.renders.empty()) {
    if (a.data.empty()) throw InvalidArgument("eval: --renders needs --data");
    const DatasetBundle test = load_blender_dataset(a.data, a.test_split);
    p = s = 0.0;
    m = 0.0;
    for (std::size_t i = 0; i < test.images.size(); ++i) {
      Image img = composite_over(read_png(fs::path(a.renders) / ("r_" + std::to_string(i) + ".png")),
                                 test.background.data());
      if (!img.same_shape(test.images[i])) throw DataError("eval: render " + std::to_string(i) + " has the wrong size");
      p += psnr(img, test.images[i]);
      s += ssim(img, test.images[i]);
      const int need = ms_ssim_min_size(int(default_ms_ssim_weights().size()));
      m += (img.width >= need && img.height >= need) ? ms_ssim(img, test.images[i]) : NAN;
    }
    const double n = double(test.images.size());
    p /= n;
    s /= n;
    m /= n;
  }
  if (std::isnan(rot) && std::isnan(p)) throw InvalidArgument("eval: nothing to evaluate");
  const std::string table = metrics_table(a.data.empty() ? "poses" : fs::path(a.data).filename().string(), rot,
                                          trans, p, s, m);
  if (!a.out.empty()) atomic_write_text(fs::path(a.out) / "metrics.tsv", table);
  std::cout << table;
  return kExitOk;
}

// --- homography ---------------------------------------------------------------------

struct HomographyArgs {
  ConfigFlags cfg;
  std::string image;
  std::string out;
  bool quiet = false;
};

int cmd_homography(const HomographyArgs& a) {
  TrainConfig config = build_config(TrainConfig::defaults(Experiment::homography2d), a.cfg);
  if (config.experiment != Experiment::homography2d) throw InvalidArgument("homography: config is not planar");
  const Image image = a.image.empty() ? make_procedural_image(config.image_size, config.image_size, config.seed)
                                      : composite_over(read_png(a.image), std::array<float, 3>{1, 1, 1}.data());
  const fs::path out = output_dir(a.out);
  fs::create_directories(out);
  const HomographyResult r = run_homography_experiment(image, config, [&](const HomographyTraceRow& row) {
    if (!a.quiet && row.iteration % (config.log_interval * 50) == 0) {
      std::fprintf(stderr, "iter %5d  loss %.6f  corner error %.3f px\n", row.iteration, row.loss,
                   row.corner_error_px);
    }
  });
  std::string csv = homography_csv_header();
  for (const auto& row : r.trace) csv += homography_csv_row(row);
  atomic_write_text(out / "corner_error.csv", csv);
  write_png(out / "homography_patches.png",
            render_homography_visualization(r, config, image.width, image.height));
  std::ostringstream warps;
  warps << "# patch h1 h2 h3 h4 h5 h6 h7 h8 (estimated, then ground truth)\n";
  for (std::size_t i = 0; i < r.estimate.size(); ++i) {
    warps << "est " << i;
    for (int k = 0; k < 8; ++k) warps << ' ' << r.estimate[i].params[k];
    warps << "\ngt  " << i;
    for (int k = 0; k < 8; ++k) warps << ' ' << r.ground_truth[i].params[k];
    warps << '\n';
  }
  atomic_write_text(out / "warps.txt", warps.str());
  std::printf("c2f %s: corner error %.4f px -> %.4f px (%.3f%% of width)\n", to_string(config.c2f).c_str(),
              r.initial_error_px, r.final_error_px, 100.0 * r.final_error_px / image.width);
  return kExitOk;
}

// --- make-toy-scene --------------------------------------------------------------------

struct ToyArgs {
  ToySceneOptions options;
  std::string out;
};

int cmd_make_toy(const ToyArgs& a) {
  const ToyScene scene = make_toy_scene(a.options);
  const fs::path out = output_dir(a.out);
  save_blender_dataset(out, "train", scene.train);
  save_blender_dataset(out, "test", scene.test);
  write_pose_file(out / "poses_train.txt", scene.train.poses);
  std::cout << out.string() << '\n';
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"bundle-adjusting hash-encoded neural fields"};
  app.require_subcommand(1);

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand("train", "joint pose and radiance field optimisation");
  add_config_flags(c_train, train.cfg);
  c_train->add_option("--data", train.data, "dataset directory with transforms_<split>.json");
  c_train->add_option("--train-split", train.train_split);
  c_train->add_option("--test-split", train.test_split);
  c_train->add_flag("--toy", train.toy, "use the procedural blob scene");
  c_train->add_option("--toy-seed", train.toy_seed);
  c_train->add_option("--contraction", train.cfg.contraction, "aabb or inverted-sphere");
  c_train->add_option("--out", train.out);
  c_train->add_option("--resume", train.resume, "continue from a checkpoint");
  c_train->add_option("--checkpoint-every", train.checkpoint_every);
  c_train->add_flag("--quiet", train.quiet);

  RenderArgs render;
  CLI::App* c_render = app.add_subcommand("render", "render views from a checkpoint");
  c_render->add_option("--checkpoint", render.checkpoint)->required();
  c_render->add_option("--poses", render.poses, "pose file (6 or 12 numbers per line)");
  c_render->add_option("--data", render.data, "take intrinsics (and poses) from a dataset");
  c_render->add_option("--split", render.split);
  c_render->add_option("--width", render.width);
  c_render->add_option("--height", render.height);
  c_render->add_option("--fov", render.fov, "horizontal field of view in radians");
  c_render->add_option("--out", render.out);

  EvalArgs eval;
  CLI::App* c_eval = app.add_subcommand("eval", "pose and image metrics table");
  c_eval->add_option("--estimated", eval.estimated, "pose file or dataset directory");
  c_eval->add_option("--ground-truth", eval.ground_truth, "pose file or dataset directory");
  c_eval->add_option("--split", eval.split);
  c_eval->add_option("--renders", eval.renders, "directory of r_<i>.png predictions");
  c_eval->add_option("--data", eval.data, "dataset holding the reference test views");
  c_eval->add_option("--test-split", eval.test_split);
  c_eval->add_option("--out", eval.out);

  HomographyArgs homo;
  CLI::App* c_homo = app.add_subcommand("homography", "planar patch alignment experiment");
  add_config_flags(c_homo, homo.cfg);
  c_homo->add_option("--image", homo.image, "PNG to cut patches from (default: procedural)");
  c_homo->add_option("--out", homo.out);
  c_homo->add_flag("--quiet", homo.quiet);

  ToyArgs toy;
  CLI::App* c_toy = app.add_subcommand("make-toy-scene", "write the procedural blob dataset");
  c_toy->add_option("--seed", toy.options.seed);
  c_toy->add_option("--views", toy.options.train_views);
  c_toy->add_option("--test-views", toy.options.test_views);
  c_toy->add_option("--size", toy.options.width)->each([&](const std::string&) { toy.options.height = toy.options.width; });
  c_toy->add_option("--blobs", toy.options.blobs);
  c_toy->add_option("--out", toy.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_train->parsed()) return cmd_train(train);
    if (c_render->parsed()) return cmd_render(render);
    if (c_eval->parsed()) return cmd_eval(eval);
    if (c_homo->parsed()) return cmd_homography(homo);
    if (c_toy->parsed()) return cmd_make_toy(toy);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
