#include "baangp/homography.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "baangp/error.hpp"
#include "baangp/optim.hpp"
#include "baangp/schedule.hpp"

namespace baangp {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix(splitmix(seed) ^ tag); }

std::vector<Mat3> matrices(const std::vector<Homography2D>& ws) {
  std::vector<Mat3> out;
  for (const auto& w : ws) out.push_back(w.matrix());
  return out;
}

std::array<Eigen::Vector2d, 4> corners(double h) {
  return {Eigen::Vector2d(-h, -h), Eigen::Vector2d(h, -h), Eigen::Vector2d(h, h), Eigen::Vector2d(-h, h)};
}

// Field input for a normalized image point: unit coordinates, clamped.
void to_unit(double x, double y, float* unit, bool* inside) {
  const double ux = (x + 1.0) * 0.5;
  const double uy = (y + 1.0) * 0.5;
  inside[0] = ux >= 0.0 && ux <= 1.0;
  inside[1] = uy >= 0.0 && uy <= 1.0;
  unit[0] = float(std::clamp(ux, 0.0, 1.0));
  unit[1] = float(std::clamp(uy, 0.0, 1.0));
}

} // namespace

std::vector<Homography2D> make_ground_truth_warps(int patches, double offset, double noise, std::uint64_t seed) {
  if (patches < 1) throw InvalidArgument("warps: need at least one patch");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  static const double sx[4] = {-1.0, 1.0, -1.0, 1.0};
  static const double sy[4] = {-1.0, -1.0, 1.0, 1.0};
  std::vector<Homography2D> out(static_cast<std::size_t>(patches));
  for (int i = 1; i < patches; ++i) {
    Vec8 p;
    for (int k = 0; k < 8; ++k) p[k] = noise * n(rng);
    p[0] += offset * sx[(i - 1) % 4];
    p[1] += offset * sy[(i - 1) % 4];
    out[std::size_t(i)].params = p;
  }
  return out;
}

void sample_image(const Image& img, double x, double y, float* rgb) {
  const double px = std::clamp((x + 1.0) * 0.5 * img.width - 0.5, 0.0, double(img.width - 1));
  const double py = std::clamp((y + 1.0) * 0.5 * img.height - 0.5, 0.0, double(img.height - 1));
  const int x0 = std::min(int(px), img.width - 1);
  const int y0 = std::min(int(py), img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = px - x0;
  const double fy = py - y0;
  for (int c = 0; c < 3; ++c) {
    const double top = (1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
    const double bot = (1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
    rgb[c] = float((1.0 - fy) * top + fy * bot);
  }
}

double mean_corner_error_px(const std::vector<Mat3>& a, const std::vector<Mat3>& b, double half_size, int width) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("corner error: warp lists differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (const auto& c : corners(half_size)) acc += (homography_apply(a[i], c) - homography_apply(b[i], c)).norm();
  }
  return acc / double(4 * a.size()) * 0.5 * double(width);
}

std::string homography_csv_header() { return "iteration,loss,corner_error_px\n"; }

std::string homography_csv_row(const HomographyTraceRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.iteration, r.loss, r.corner_error_px);
  return buf;
}

double planar_loss(const HashGrid& grid, const Mlp& mlp, std::span<const float> mlp_params,
                   const std::vector<Vec8>& warps, C2FMode c2f, double alpha, std::span<const PlanarSample> samples,
                   PlanarGradients* grads) {
  if (grid.config().dim != 2) throw InvalidArgument("planar field: grid must be 2D");
  if (samples.empty()) throw InvalidArgument("planar field: empty batch");
  const int levels = grid.config().levels;
  const int feats = grid.config().features;
  const std::size_t enc = std::size_t(grid.output_dim());
  const std::size_t rows = samples.size();

  std::vector<Mat3> hm(warps.size());
  std::vector<Mat9x8> jac(warps.size());
  for (std::size_t i = 0; i < warps.size(); ++i) hm[i] = homography_exp(warps[i], jac[i]);

  thread_local std::vector<float> unit, raw, encoded, grad_out, grad_enc, d_raw;
  thread_local std::vector<std::uint8_t> inside;
  thread_local std::vector<Eigen::Matrix<double, 2, 8>> dx_dp;
  thread_local Mlp::Workspace ws;
  unit.resize(rows * 2);
  raw.resize(rows * enc);
  encoded.resize(rows * enc);
  inside.resize(rows * 2);
  dx_dp.resize(rows);
  for (std::size_t row = 0; row < rows; ++row) {
    const PlanarSample& s = samples[row];
    if (s.patch < 0 || std::size_t(s.patch) >= warps.size()) throw InvalidArgument("planar field: patch out of range");
    const Mat3& m = hm[std::size_t(s.patch)];
    const Eigen::Vector3d xh = m * Eigen::Vector3d(s.local.x(), s.local.y(), 1.0);
    if (std::abs(xh.z()) < 1e-12) throw DegenerateConfiguration("homography: warp sends a pixel to infinity");
    const double x = xh.x() / xh.z();
    const double y = xh.y() / xh.z();
    if (grads) {
      // d(x, y)/d(row-major H entries), then through the exponential.
      Eigen::Matrix<double, 2, 9> dh = Eigen::Matrix<double, 2, 9>::Zero();
      const double iw = 1.0 / xh.z();
      const double uu[3] = {s.local.x(), s.local.y(), 1.0};
      for (int c = 0; c < 3; ++c) {
        dh(0, c) = uu[c] * iw;
        dh(1, 3 + c) = uu[c] * iw;
        dh(0, 6 + c) = -x * uu[c] * iw;
        dh(1, 6 + c) = -y * uu[c] * iw;
      }
      dx_dp[row] = dh * jac[std::size_t(s.patch)];
    }
    bool in[2];
    to_unit(x, y, unit.data() + 2 * row, in);
    inside[2 * row] = in[0];
    inside[2 * row + 1] = in[1];
    const std::span<float> r(raw.data() + row * enc, enc);
    grid.encode(std::span<const float>(unit.data() + 2 * row, 2), r);
    apply_c2f(c2f, r, std::span<float>(encoded.data() + row * enc, enc), levels, feats, alpha);
  }
  mlp.forward(mlp_params, encoded, rows, ws);
  const auto logits = mlp.output(ws);
  grad_out.resize(rows * 3);
  double loss = 0.0;
  const double scale = 2.0 / double(rows * 3);
  for (std::size_t row = 0; row < rows; ++row) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t i = row * 3 + c;
      const double v = sigmoid(logits[i]);
      const double d = v - double(samples[row].target[c]);
      loss += d * d;
      grad_out[i] = float(scale * d * v * (1.0 - v));
    }
  }
  loss /= double(rows * 3);
  if (!grads || !std::isfinite(loss)) return loss;

  grads->grid.assign(grid.param_count(), 0.0f);
  grads->mlp.assign(mlp.param_count(), 0.0f);
  grads->warps.assign(warps.size() * 8, 0.0);
  grad_enc.resize(rows * enc);
  d_raw.resize(enc);
  mlp.backward(mlp_params, ws, grad_out, grads->mlp, grad_enc);
  for (std::size_t row = 0; row < rows; ++row) {
    apply_c2f_backward(c2f, std::span<const float>(grad_enc.data() + row * enc, enc), d_raw, levels, feats, alpha);
    float d_unit[2] = {0.0f, 0.0f};
    grid.encode_backward(std::span<const float>(unit.data() + 2 * row, 2), d_raw, grads->grid,
                         std::span<float>(d_unit, 2));
    const double gx = inside[2 * row] ? 0.5 * d_unit[0] : 0.0;
    const double gy = inside[2 * row + 1] ? 0.5 * d_unit[1] : 0.0;
    const std::size_t base = 8 * std::size_t(samples[row].patch);
    for (int k = 0; k < 8; ++k) grads->warps[base + std::size_t(k)] += gx * dx_dp[row](0, k) + gy * dx_dp[row](1, k);
  }
  return loss;
}

HomographyResult run_homography_experiment(const Image& image, const TrainConfig& config,
                                           const std::function<void(const HomographyTraceRow&)>& on_row) {
  config.validate();
  if (config.experiment != Experiment::homography2d) throw InvalidArgument("homography: config is not planar");
  if (image.channels < 3 || image.width < 8 || image.height < 8) throw InvalidArgument("homography: need an RGB image");
  const int n_patches = config.patches;
  const double h = config.patch_half_size;
  const int side = std::max(2, int(std::lround(h * image.width)));
  const std::size_t pixels = std::size_t(side) * std::size_t(side);

  HomographyResult res;
  res.ground_truth = make_ground_truth_warps(n_patches, config.warp_translation, config.warp_noise,
                                             sub_seed(config.seed, 5));
  res.estimate.assign(std::size_t(n_patches), Homography2D{});
  const std::vector<Mat3> gt = matrices(res.ground_truth);

  // Observed patches.
  std::vector<float> targets(std::size_t(n_patches) * pixels * 3);
  const auto local = [&](std::size_t k) {
    return Eigen::Vector2d(-h + (double(k % std::size_t(side)) + 0.5) * 2.0 * h / side,
                           -h + (double(k / std::size_t(side)) + 0.5) * 2.0 * h / side);
  };
  for (int i = 0; i < n_patches; ++i) {
    for (std::size_t k = 0; k < pixels; ++k) {
      const Eigen::Vector2d x = homography_apply(gt[std::size_t(i)], local(k));
      sample_image(image, x.x(), x.y(), targets.data() + (std::size_t(i) * pixels + k) * 3);
    }
  }

  res.grid = HashGrid(config.grid, sub_seed(config.seed, 1));
  const std::size_t enc = std::size_t(res.grid.output_dim());
  res.mlp = Mlp({int(enc), config.field_hidden, config.field_hidden, 3});
  res.mlp_params.assign(res.mlp.param_count(), 0.0f);
  res.mlp.init_params(res.mlp_params, sub_seed(config.seed, 3));
  C2FSchedule c2f = config.c2f_schedule;
  c2f.levels = config.grid.levels;

  AdamState adam_grid(res.grid.param_count());
  AdamState adam_mlp(res.mlp_params.size());
  std::vector<float> warp_params(std::size_t(8 * std::max(0, n_patches - 1)), 0.0f); // patch 0 anchored
  AdamState adam_warp(warp_params.size());

  std::mt19937_64 rng(sub_seed(config.seed, 6));
  std::uniform_int_distribution<std::size_t> pick(0, pixels - 1);
  const std::size_t batch = std::size_t(config.patch_batch);
  std::vector<PlanarSample> samples(batch * std::size_t(n_patches));
  PlanarGradients grads;
  std::vector<float> warp_grad(warp_params.size());

  const auto warp_vectors = [&] {
    std::vector<Vec8> w(std::size_t(n_patches), Vec8::Zero());
    for (int i = 1; i < n_patches; ++i)
      for (int k = 0; k < 8; ++k) w[std::size_t(i)][k] = double(warp_params[std::size_t(8 * (i - 1) + k)]);
    return w;
  };
  const auto current = [&] {
    const std::vector<Vec8> w = warp_vectors();
    std::vector<Mat3> m;
    for (std::size_t i = 0; i < w.size(); ++i) {
      res.estimate[i].params = w[i];
      m.push_back(homography_exp(w[i]));
    }
    return m;
  };
  res.initial_error_px = mean_corner_error_px(current(), gt, h, image.width);

  for (int it = 0; it < config.iterations; ++it) {
    const double alpha = c2f_alpha(c2f, double(it) / double(config.iterations));
    for (int i = 0; i < n_patches; ++i) {
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t k = pick(rng);
        PlanarSample& s = samples[std::size_t(i) * batch + b];
        s.patch = i;
        s.local = local(k);
        const float* t = targets.data() + (std::size_t(i) * pixels + k) * 3;
        std::copy(t, t + 3, s.target.begin());
      }
    }
    const double loss =
        planar_loss(res.grid, res.mlp, res.mlp_params, warp_vectors(), config.c2f, alpha, samples, &grads);
    if (!std::isfinite(loss)) throw TrainingDiverged("homography: non-finite loss at iteration " + std::to_string(it));

    const float lr_net = float(schedule_lr(config.network_lr, config, it));
    const float lr_warp = float(schedule_lr(config.pose_lr, config, it));
    adam_step(res.grid.params(), grads.grid, adam_grid, lr_net);
    adam_step(res.mlp_params, grads.mlp, adam_mlp, lr_net);
    for (std::size_t k = 0; k < warp_grad.size(); ++k) warp_grad[k] = float(grads.warps[8 + k]);
    adam_step(warp_params, warp_grad, adam_warp, lr_warp);

    res.final_alpha = alpha;
    const bool log = it % config.log_interval == 0 || it + 1 == config.iterations;
    if (log) {
      HomographyTraceRow row{it, loss, mean_corner_error_px(current(), gt, h, image.width)};
      if (on_row) on_row(row);
      res.trace.push_back(row);
    }
  }
  res.final_error_px = mean_corner_error_px(current(), gt, h, image.width);
  if (res.estimate[0].params != Vec8::Zero()) throw Error("homography: anchored warp moved");
  return res;
}

Image render_homography_visualization(const HomographyResult& r, const TrainConfig& config, int width, int height) {
  Image img(width, height, 3);
  const std::size_t enc = std::size_t(r.grid.output_dim());
  std::vector<float> raw(enc), encoded(std::size_t(width) * enc);
  Mlp::Workspace ws;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      float unit[2];
      bool in[2];
      to_unit((x + 0.5) / width * 2.0 - 1.0, (y + 0.5) / height * 2.0 - 1.0, unit, in);
      r.grid.encode(std::span<const float>(unit, 2), raw);
      apply_c2f(config.c2f, raw, std::span<float>(encoded.data() + std::size_t(x) * enc, enc), config.grid.levels,
                config.grid.features, r.final_alpha);
    }
    r.mlp.forward(r.mlp_params, encoded, std::size_t(width), ws);
    const auto out = r.mlp.output(ws);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = sigmoid(out[std::size_t(x) * 3 + std::size_t(c)]);
  }
  const auto draw = [&](const Mat3& hm, const float color[3]) {
    const auto cs = corners(config.patch_half_size);
    for (int e = 0; e < 4; ++e) {
      for (int s = 0; s <= 400; ++s) {
        const Eigen::Vector2d u = cs[std::size_t(e)] + (cs[std::size_t((e + 1) % 4)] - cs[std::size_t(e)]) * (s / 400.0);
        const Eigen::Vector2d p = homography_apply(hm, u);
        const int px = int(std::floor((p.x() + 1.0) * 0.5 * width));
        const int py = int(std::floor((p.y() + 1.0) * 0.5 * height));
        if (px < 0 || py < 0 || px >= width || py >= height) continue;
        for (int c = 0; c < 3; ++c) img.at(px, py, c) = color[c];
      }
    }
  };
  const float green[3] = {0.0f, 0.9f, 0.0f};
  const float red[3] = {0.9f, 0.0f, 0.0f};
  for (const auto& w : r.ground_truth) draw(w.matrix(), green);
  for (const auto& w : r.estimate) draw(w.matrix(), red);
  return img;
}

} // namespace baangp
