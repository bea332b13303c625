#include "baangp/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "baangp/binary_io.hpp"
#include "baangp/error.hpp"

namespace baangp {

// --- occupancy grid ----------------------------------------------------------

OccupancyGrid::OccupancyGrid(int res, const Eigen::Vector3f& lo, const Eigen::Vector3f& hi, float thr,
                             float initial_density)
    : resolution(res), aabb_min(lo), aabb_max(hi), threshold(thr) {
  if (res < 1) throw InvalidArgument("occupancy grid: resolution must be >= 1");
  if (!((hi - lo).minCoeff() > 0.0f)) throw InvalidArgument("occupancy grid: empty box");
  if (!(thr >= 0.0f)) throw InvalidArgument("occupancy grid: threshold must be >= 0");
  if (!(initial_density >= 0.0f) || !std::isfinite(initial_density)) {
    throw InvalidArgument("occupancy grid: initial density must be finite and >= 0");
  }
  const std::size_t n = std::size_t(res) * std::size_t(res) * std::size_t(res);
  densities.assign(n, initial_density);
  occupancy.assign(n, 0);
  recompute();
}

std::int64_t OccupancyGrid::cell_of(const float* p) const {
  std::int64_t idx[3];
  for (int a = 0; a < 3; ++a) {
    const float u = (p[a] - aabb_min[a]) / (aabb_max[a] - aabb_min[a]);
    if (!(u >= 0.0f && u <= 1.0f)) return -1;
    idx[a] = std::min<std::int64_t>(std::int64_t(u * float(resolution)), resolution - 1);
  }
  return (idx[2] * resolution + idx[1]) * resolution + idx[0];
}

bool OccupancyGrid::occupied_at(const float* p) const {
  const std::int64_t c = cell_of(p);
  return c < 0 || occupancy[std::size_t(c)] != 0;
}

Eigen::Vector3f OccupancyGrid::cell_min(std::size_t index) const {
  const std::size_t r = std::size_t(resolution);
  const Eigen::Vector3f ijk(float(index % r), float((index / r) % r), float(index / (r * r)));
  return aabb_min + ijk.cwiseProduct(cell_size());
}

void OccupancyGrid::fill(float density) {
  std::fill(densities.begin(), densities.end(), density);
  recompute();
}

void OccupancyGrid::recompute() {
  for (std::size_t i = 0; i < densities.size(); ++i) occupancy[i] = densities[i] > threshold ? 1 : 0;
}

std::size_t OccupancyGrid::occupied_count() const {
  return std::size_t(std::count(occupancy.begin(), occupancy.end(), std::uint8_t(1)));
}

void OccupancyGrid::save(std::ostream& os) const {
  binio::write_tag(os, "OCCG");
  binio::write_u32(os, 1);
  binio::write_u32(os, std::uint32_t(resolution));
  for (int a = 0; a < 3; ++a) binio::write_f32(os, aabb_min[a]);
  for (int a = 0; a < 3; ++a) binio::write_f32(os, aabb_max[a]);
  binio::write_f32(os, threshold);
  binio::write_f32_vector(os, densities);
}

OccupancyGrid OccupancyGrid::load(std::istream& is) {
  binio::expect_tag(is, "OCCG");
  if (binio::read_u32(is) != 1) throw DataError("occupancy grid: unsupported version");
  OccupancyGrid g;
  g.resolution = int(binio::read_u32(is));
  for (int a = 0; a < 3; ++a) g.aabb_min[a] = binio::read_f32(is);
  for (int a = 0; a < 3; ++a) g.aabb_max[a] = binio::read_f32(is);
  g.threshold = binio::read_f32(is);
  g.densities = binio::read_f32_vector(is);
  const std::size_t r = std::size_t(g.resolution);
  if (g.resolution < 1 || g.densities.size() != r * r * r) throw DataError("occupancy grid: size mismatch");
  g.occupancy.assign(g.densities.size(), 0);
  g.recompute();
  return g;
}

// --- marching ------------------------------------------------------------------

bool intersect_aabb(const Ray& ray, const Eigen::Vector3f& lo, const Eigen::Vector3f& hi, float& t_near,
                    float& t_far, int* entry_axis) {
  float t0 = 0.0f;
  float t1 = std::numeric_limits<float>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    const float o = ray.origin[a];
    const float d = ray.direction[a];
    if (d == 0.0f) {
      if (o < lo[a] || o > hi[a]) return false;
      continue;
    }
    const float inv = 1.0f / d;
    float ta = (lo[a] - o) * inv;
    float tb = (hi[a] - o) * inv;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return false;
  t_near = t0;
  t_far = t1;
  if (entry_axis) *entry_axis = axis;
  return true;
}

void march_ray(const Ray& ray, float step, const Eigen::Vector3f& lo, const Eigen::Vector3f& hi,
               const OccupancyGrid* occupancy, std::vector<RaySample>& out) {
  out.clear();
  if (!(step > 0.0f)) throw InvalidArgument("march_ray: step must be positive");
  float t_near, t_far;
  if (!intersect_aabb(ray, lo, hi, t_near, t_far)) return;
  const auto count = std::int64_t(std::floor((t_far - t_near) / step));
  for (std::int64_t i = 0; i < count; ++i) {
    const float t = t_near + (float(i) + 0.5f) * step;
    if (occupancy) {
      const Eigen::Vector3f p = ray.origin + t * ray.direction;
      if (!occupancy->occupied_at(p.data())) continue;
    }
    out.push_back(RaySample{t, step});
  }
}

std::vector<RaySample> march_ray(const Ray& ray, float step, const OccupancyGrid& occupancy) {
  std::vector<RaySample> out;
  march_ray(ray, step, occupancy.aabb_min, occupancy.aabb_max, &occupancy, out);
  return out;
}

void march_ray_unbounded(const Ray& ray, float step, int far_samples, float far_radius, const OccupancyGrid* occupancy,
                         std::vector<RaySample>& out) {
  out.clear();
  if (!(step > 0.0f)) throw InvalidArgument("march_ray: step must be positive");
  if (far_samples < 0 || !(far_radius > 1.0f)) throw InvalidArgument("march_ray: bad far-field sampling");
  const double b = ray.origin.cast<double>().dot(ray.direction.cast<double>());
  const double c = ray.origin.cast<double>().squaredNorm();
  const double disc = b * b - (c - 1.0);
  double t_start = std::max(0.0, -b);
  if (disc > 0.0) {
    const double root = std::sqrt(disc);
    const double t0 = std::max(0.0, -b - root);
    const double t1 = -b + root;
    if (t1 > t0) {
      const auto count = std::int64_t(std::floor((t1 - t0) / step));
      for (std::int64_t i = 0; i < count; ++i) {
        const float t = float(t0 + (double(i) + 0.5) * step);
        if (occupancy) {
          const Eigen::Vector3f p = ray.origin + t * ray.direction;
          if (!occupancy->occupied_at(p.data())) continue;
        }
        out.push_back(RaySample{t, step});
      }
      t_start = t1;
    }
  }
  if (far_samples == 0) return;
  const double h0 = std::max(1.0, (ray.origin.cast<double>() + t_start * ray.direction.cast<double>()).norm());
  const double s0 = 1.0 / h0;
  const double s1 = 1.0 / double(far_radius);
  if (!(s0 > s1)) return;
  // Distance along the ray at which |o + t d| = h, on the outgoing branch.
  const auto t_at = [&](double s) {
    const double h = 1.0 / s;
    return -b + std::sqrt(std::max(0.0, b * b - c + h * h));
  };
  const double ds = (s1 - s0) / double(far_samples);
  double t_prev = std::max(t_start, t_at(s0));
  for (int k = 0; k < far_samples; ++k) {
    const double t_mid = t_at(s0 + (double(k) + 0.5) * ds);
    const double t_next = t_at(s0 + double(k + 1) * ds);
    const double delta = t_next - t_prev;
    if (delta > 0.0 && float(t_mid) > (out.empty() ? 0.0f : out.back().t)) {
      out.push_back(RaySample{float(t_mid), float(delta)});
    }
    t_prev = t_next;
  }
}

void update_occupancy(OccupancyGrid& grid, const DensityFn& density, float decay, std::uint64_t seed) {
  if (!(decay > 0.0f && decay <= 1.0f)) throw InvalidArgument("update_occupancy: decay must be in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> jitter(0.0f, 1.0f);
  const Eigen::Vector3f size = grid.cell_size();
  constexpr std::size_t kChunk = 8192;
  std::vector<float> points, sigma;
  for (std::size_t begin = 0; begin < grid.cell_count(); begin += kChunk) {
    const std::size_t end = std::min(grid.cell_count(), begin + kChunk);
    points.resize((end - begin) * 3);
    sigma.assign(end - begin, 0.0f);
    for (std::size_t i = begin; i < end; ++i) {
      const Eigen::Vector3f lo = grid.cell_min(i);
      for (int a = 0; a < 3; ++a) {
        // keep strictly inside the box so bounded contraction never rejects the point
        const float p = lo[a] + jitter(rng) * size[a];
        points[(i - begin) * 3 + std::size_t(a)] = std::clamp(p, grid.aabb_min[a], grid.aabb_max[a]);
      }
    }
    density(points, sigma);
    for (std::size_t i = begin; i < end; ++i) {
      const float s = std::isfinite(sigma[i - begin]) ? std::max(sigma[i - begin], 0.0f) : 0.0f;
      grid.densities[i] = std::max(grid.densities[i] * decay, s);
    }
  }
  grid.recompute();
}

// --- compositing -----------------------------------------------------------------

namespace {

void check_composite_inputs(std::span<const float> sigma, std::span<const float> rgb, std::span<const float> delta) {
  if (rgb.size() != sigma.size() * 3 || delta.size() != sigma.size()) {
    throw InvalidArgument("composite: sigma, rgb and delta sizes disagree");
  }
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] >= 0.0f)) throw InvalidArgument("composite: negative or NaN density");
    if (!(delta[i] >= 0.0f)) throw InvalidArgument("composite: negative or NaN segment length");
  }
}

} // namespace

CompositeResult composite(std::span<const float> sigma, std::span<const float> rgb, std::span<const float> delta,
                          const Rgb& background, float min_transmittance) {
  check_composite_inputs(sigma, rgb, delta);
  double color[3] = {0.0, 0.0, 0.0};
  double opacity = 0.0;
  double depth = 0.0;
  double trans = 1.0;
  std::size_t i = 0;
  for (; i < sigma.size(); ++i) {
    if (min_transmittance > 0.0f && trans < min_transmittance) break;
    const double tau = double(sigma[i]) * double(delta[i]);
    const double alpha = -std::expm1(-tau);
    const double w = alpha * trans;
    for (int ch = 0; ch < 3; ++ch) color[ch] += w * double(rgb[i * 3 + std::size_t(ch)]);
    opacity += w;
    depth += tau;
    trans = std::exp(-depth);
  }
  CompositeResult out;
  for (int ch = 0; ch < 3; ++ch) out.rgb[std::size_t(ch)] = float(color[ch] + trans * double(background[std::size_t(ch)]));
  out.opacity = float(std::min(opacity, 1.0));
  out.used = i;
  return out;
}

void composite_backward(std::span<const float> sigma, std::span<const float> rgb, std::span<const float> delta,
                        const Rgb& background, const Rgb& grad_rgb, float grad_opacity, std::span<float> d_sigma,
                        std::span<float> d_rgb, std::span<float> d_delta) {
  check_composite_inputs(sigma, rgb, delta);
  const std::size_t n = sigma.size();
  if (d_sigma.size() != n || d_rgb.size() != 3 * n || d_delta.size() != n) {
    throw InvalidArgument("composite_backward: output sizes disagree");
  }
  // Project colors onto grad_rgb first: everything below is linear in color.
  const auto dot_g = [&](const float* c) {
    return double(grad_rgb[0]) * c[0] + double(grad_rgb[1]) * c[1] + double(grad_rgb[2]) * c[2];
  };
  std::vector<double> trans(n + 1);
  double depth = 0.0;
  trans[0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    depth += double(sigma[i]) * double(delta[i]);
    trans[i + 1] = std::exp(-depth);
  }
  // suffix = sum_{i>k} w_i (g . c_i) + T_N (g . bg)
  double suffix = trans[n] * dot_g(background.data());
  for (std::size_t k = n; k-- > 0;) {
    const double w = trans[k] - trans[k + 1];
    const double gc = dot_g(rgb.data() + 3 * k);
    const double d_tau = trans[k + 1] * gc - suffix + double(grad_opacity) * trans[n];
    d_sigma[k] = float(d_tau * double(delta[k]));
    d_delta[k] = float(d_tau * double(sigma[k]));
    for (int ch = 0; ch < 3; ++ch) d_rgb[3 * k + std::size_t(ch)] = float(w * double(grad_rgb[std::size_t(ch)]));
    suffix += w * gc;
  }
}

int dynamic_batch_size(int prev_rays, std::int64_t prev_samples, std::int64_t target_samples, int min_rays,
                       int max_rays) {
  if (min_rays < 1 || max_rays < min_rays) throw InvalidArgument("dynamic_batch_size: bad ray bounds");
  if (prev_samples <= 0) return prev_rays;
  const double next = std::round(double(prev_rays) * double(target_samples) / double(prev_samples));
  return int(std::clamp(next, double(min_rays), double(max_rays)));
}

// --- model -------------------------------------------------------------------------

void RadianceModel::validate() const {
  if (grid.config().dim != 3) throw InvalidArgument("radiance model: grid must be 3D");
  if (grid.output_dim() != mlp.config().encoded_dim) {
    throw InvalidArgument("radiance model: grid output does not match decoder input");
  }
  if (unbounded()) {
    if (grid_far.config().dim != 4) throw InvalidArgument("radiance model: far grid must be 4D");
    if (grid_far.config().levels != grid.config().levels || grid_far.config().features != grid.config().features) {
      throw InvalidArgument("radiance model: near and far grids must share levels and features");
    }
  }
}

void ModelGradients::resize_for(const RadianceModel& model) {
  grid.assign(model.grid.param_count(), 0.0f);
  grid_far.assign(model.unbounded() ? model.grid_far.param_count() : 0, 0.0f);
  mlp.assign(model.mlp.param_count(), 0.0f);
}

void ModelGradients::zero() {
  std::fill(grid.begin(), grid.end(), 0.0f);
  std::fill(grid_far.begin(), grid_far.end(), 0.0f);
  std::fill(mlp.begin(), mlp.end(), 0.0f);
}

void occupancy_bounds(const RadianceModel& model, Eigen::Vector3f& lo, Eigen::Vector3f& hi) {
  if (model.unbounded()) {
    lo = Eigen::Vector3f::Constant(-1.0f);
    hi = Eigen::Vector3f::Constant(1.0f);
  } else {
    lo = model.contraction.aabb_min.cast<float>();
    hi = model.contraction.aabb_max.cast<float>();
  }
}

namespace {

// Contracts one point and writes its (c2f-adjusted) encoding. Returns true for the far grid.
bool encode_point(const RadianceModel& model, const float* p, C2FMode mode, double alpha, float* unit, float* jac,
                  std::span<float> raw, std::span<float> encoded) {
  const ContractionBranch branch = contract_unit(p, model.contraction, unit, jac);
  const bool far = branch == ContractionBranch::out_sphere;
  const HashGrid& g = far ? model.grid_far : model.grid;
  g.encode(std::span<const float>(unit, std::size_t(far ? 4 : 3)), raw);
  apply_c2f(mode, raw, encoded, g.config().levels, g.config().features, alpha);
  return far;
}

void march(const RadianceModel& model, const Ray& ray, const RenderSettings& s, const OccupancyGrid* occ,
           std::vector<RaySample>& out) {
  if (model.unbounded()) {
    march_ray_unbounded(ray, s.step, s.far_samples, s.far_radius, occ, out);
  } else {
    march_ray(ray, s.step, model.contraction.aabb_min.cast<float>(), model.contraction.aabb_max.cast<float>(), occ,
              out);
  }
}

} // namespace

DensityFn make_density_fn(const RadianceModel& model, C2FMode mode, double alpha) {
  return [&model, mode, alpha](std::span<const float> points, std::span<float> sigma) {
    const std::size_t n = sigma.size();
    const std::size_t enc = std::size_t(model.grid.output_dim());
    std::vector<float> raw(enc), encoded(n * enc);
    float unit[4];
    for (std::size_t i = 0; i < n; ++i) {
      encode_point(model, points.data() + 3 * i, mode, alpha, unit, nullptr, raw,
                   std::span<float>(encoded).subspan(i * enc, enc));
    }
    Mlp::Workspace ws;
    model.mlp.density(encoded, n, ws, sigma);
  };
}

// --- batched rendering ---------------------------------------------------------------

void BatchRenderer::forward(const RadianceModel& model, std::span<const Ray> rays, const RenderSettings& settings,
                            const OccupancyGrid* occupancy) {
  settings_ = settings;
  rays_.assign(rays.begin(), rays.end());
  ray_begin_.assign(1, 0);
  t_.clear();
  delta_.clear();
  for (const Ray& ray : rays_) {
    march(model, ray, settings, occupancy, scratch_);
    for (const RaySample& s : scratch_) {
      t_.push_back(s.t);
      delta_.push_back(s.delta);
    }
    ray_begin_.push_back(t_.size());
  }
  near_grad_.assign(rays_.size() * 6, 0.0f);
  if (!model.unbounded()) {
    // Samples sit at t_near + (i + 1/2) step, so they slide with the entry point.
    const Eigen::Vector3f lo = model.contraction.aabb_min.cast<float>();
    const Eigen::Vector3f hi = model.contraction.aabb_max.cast<float>();
    for (std::size_t r = 0; r < rays_.size(); ++r) {
      if (ray_begin_[r] == ray_begin_[r + 1]) continue;
      float tn = 0.0f, tf = 0.0f;
      int axis = -1;
      if (!intersect_aabb(rays_[r], lo, hi, tn, tf, &axis) || axis < 0) continue;
      const float inv = 1.0f / rays_[r].direction[axis];
      near_grad_[6 * r + std::size_t(axis)] = -inv;
      near_grad_[6 * r + 3 + std::size_t(axis)] = -tn * inv;
    }
  }

  const std::size_t n = t_.size();
  const std::size_t enc = std::size_t(model.grid.output_dim());
  const std::size_t shd = std::size_t(model.mlp.sh_dim());
  unit_.assign(n * 4, 0.0f);
  jac_.assign(n * 12, 0.0f);
  far_.assign(n, 0);
  raw_.resize(n * enc);
  encoded_.resize(n * enc);
  sh_.resize(n * shd);
  std::vector<float> sh_ray(shd);
  for (std::size_t r = 0; r < rays_.size(); ++r) {
    const Ray& ray = rays_[r];
    if (ray_begin_[r] == ray_begin_[r + 1]) continue;
    sh_encode(std::span<const float, 3>(ray.direction.data(), 3), model.mlp.config().sh_degree, sh_ray);
    for (std::size_t i = ray_begin_[r]; i < ray_begin_[r + 1]; ++i) {
      const Eigen::Vector3f p = ray.origin + t_[i] * ray.direction;
      far_[i] = encode_point(model, p.data(), settings.c2f, settings.c2f_alpha, unit_.data() + 4 * i,
                             jac_.data() + 12 * i, std::span<float>(raw_).subspan(i * enc, enc),
                             std::span<float>(encoded_).subspan(i * enc, enc));
      std::copy(sh_ray.begin(), sh_ray.end(), sh_.begin() + std::ptrdiff_t(i * shd));
    }
  }

  if (n > 0) model.mlp.forward(encoded_, sh_, n, ws_);
  colors_.assign(rays_.size() * 3, 0.0f);
  opacity_.assign(rays_.size(), 0.0f);
  for (std::size_t r = 0; r < rays_.size(); ++r) {
    const std::size_t b = ray_begin_[r];
    const std::size_t m = ray_begin_[r + 1] - b;
    CompositeResult c;
    if (m == 0) {
      c = composite({}, {}, {}, settings.background);
    } else {
      c = composite(std::span<const float>(ws_.sigma).subspan(b, m), std::span<const float>(ws_.rgb).subspan(3 * b, 3 * m),
                    std::span<const float>(delta_).subspan(b, m), settings.background, settings.min_transmittance);
    }
    std::copy(c.rgb.begin(), c.rgb.end(), colors_.begin() + std::ptrdiff_t(3 * r));
    opacity_[r] = c.opacity;
  }
}

void BatchRenderer::backward(const RadianceModel& model, std::span<const float> grad_rgb, ModelGradients& grads,
                             std::span<float> grad_origin, std::span<float> grad_direction) {
  if (settings_.min_transmittance > 0.0f) {
    throw InvalidArgument("BatchRenderer::backward: early termination must be off when training");
  }
  const std::size_t rays = ray_count();
  if (grad_rgb.size() != rays * 3) throw InvalidArgument("BatchRenderer::backward: grad size mismatch");
  const bool want_origin = !grad_origin.empty();
  const bool want_dir = !grad_direction.empty();
  if ((want_origin && grad_origin.size() != rays * 3) || (want_dir && grad_direction.size() != rays * 3)) {
    throw InvalidArgument("BatchRenderer::backward: ray gradient size mismatch");
  }
  if (want_origin) std::fill(grad_origin.begin(), grad_origin.end(), 0.0f);
  if (want_dir) std::fill(grad_direction.begin(), grad_direction.end(), 0.0f);

  const std::size_t n = sample_count();
  if (n == 0) return;
  const std::size_t enc = std::size_t(model.grid.output_dim());
  const std::size_t shd = std::size_t(model.mlp.sh_dim());
  d_sigma_.assign(n, 0.0f);
  d_rgb_.assign(n * 3, 0.0f);
  d_delta_.assign(n, 0.0f);
  for (std::size_t r = 0; r < rays; ++r) {
    const std::size_t b = ray_begin_[r];
    const std::size_t m = ray_begin_[r + 1] - b;
    if (m == 0) continue;
    const Rgb g{grad_rgb[3 * r], grad_rgb[3 * r + 1], grad_rgb[3 * r + 2]};
    composite_backward(std::span<const float>(ws_.sigma).subspan(b, m),
                       std::span<const float>(ws_.rgb).subspan(3 * b, 3 * m),
                       std::span<const float>(delta_).subspan(b, m), settings_.background, g, 0.0f,
                       std::span<float>(d_sigma_).subspan(b, m), std::span<float>(d_rgb_).subspan(3 * b, 3 * m),
                       std::span<float>(d_delta_).subspan(b, m));
  }

  const bool want_pose = want_origin || want_dir;
  d_encoded_.assign(n * enc, 0.0f);
  if (want_dir) d_sh_.assign(n * shd, 0.0f);
  model.mlp.backward(ws_, d_sigma_, d_rgb_, grads.mlp, d_encoded_, want_dir ? std::span<float>(d_sh_) : std::span<float>{});

  d_raw_.resize(enc);
  std::vector<float> sh_grad(shd);
  for (std::size_t r = 0; r < rays; ++r) {
    const Ray& ray = rays_[r];
    float along = 0.0f; // d loss / d t summed over the ray's samples
    for (std::size_t i = ray_begin_[r]; i < ray_begin_[r + 1]; ++i) {
      const bool far = far_[i] != 0;
      const HashGrid& g = far ? model.grid_far : model.grid;
      const int dim = far ? 4 : 3;
      apply_c2f_backward(settings_.c2f, std::span<const float>(d_encoded_).subspan(i * enc, enc), d_raw_,
                         g.config().levels, g.config().features, settings_.c2f_alpha);
      float d_unit[4] = {0, 0, 0, 0};
      g.encode_backward(std::span<const float>(unit_.data() + 4 * i, std::size_t(dim)), d_raw_,
                        far ? std::span<float>(grads.grid_far) : std::span<float>(grads.grid),
                        want_pose ? std::span<float>(d_unit, std::size_t(dim)) : std::span<float>{});
      if (!want_pose) continue;
      const float* j = jac_.data() + 12 * i;
      for (int c = 0; c < 3; ++c) {
        float dp = 0.0f;
        for (int row = 0; row < dim; ++row) dp += d_unit[row] * j[row * 3 + c];
        if (want_origin) grad_origin[3 * r + std::size_t(c)] += dp;
        if (want_dir) grad_direction[3 * r + std::size_t(c)] += t_[i] * dp;
        along += dp * ray.direction[c];
      }
    }
    for (int c = 0; c < 3; ++c) {
      if (want_origin) grad_origin[3 * r + std::size_t(c)] += along * near_grad_[6 * r + std::size_t(c)];
      if (want_dir) grad_direction[3 * r + std::size_t(c)] += along * near_grad_[6 * r + 3 + std::size_t(c)];
    }
    if (want_dir && ray_begin_[r] != ray_begin_[r + 1]) {
      std::fill(sh_grad.begin(), sh_grad.end(), 0.0f);
      for (std::size_t i = ray_begin_[r]; i < ray_begin_[r + 1]; ++i) {
        for (std::size_t k = 0; k < shd; ++k) sh_grad[k] += d_sh_[i * shd + k];
      }
      float dd[3] = {0, 0, 0};
      sh_encode_backward(std::span<const float, 3>(ray.direction.data(), 3), model.mlp.config().sh_degree, sh_grad,
                         std::span<float, 3>(dd, 3));
      for (int c = 0; c < 3; ++c) grad_direction[3 * r + std::size_t(c)] += dd[c];
    }
  }
}

CompositeResult render_ray_reference(const RadianceModel& model, const Ray& ray, const RenderSettings& settings,
                                     const OccupancyGrid* occupancy) {
  std::vector<RaySample> samples;
  march(model, ray, settings, occupancy, samples);
  const std::size_t enc = std::size_t(model.grid.output_dim());
  std::vector<float> raw(enc), encoded(enc);
  std::vector<float> sigma, rgb, delta;
  float unit[4];
  for (const RaySample& s : samples) {
    const Eigen::Vector3f p = ray.origin + s.t * ray.direction;
    encode_point(model, p.data(), settings.c2f, settings.c2f_alpha, unit, nullptr, raw, encoded);
    const FieldSample f = model.mlp.eval(encoded, std::span<const float, 3>(ray.direction.data(), 3));
    sigma.push_back(f.sigma);
    rgb.insert(rgb.end(), f.rgb.begin(), f.rgb.end());
    delta.push_back(s.delta);
  }
  return composite(sigma, rgb, delta, settings.background, settings.min_transmittance);
}

std::vector<float> render_image(const RadianceModel& model, const CameraIntrinsics& intr, const Mat34& pose,
                                const RenderSettings& settings, const OccupancyGrid* occupancy) {
  intr.validate();
  const std::size_t w = std::size_t(intr.width);
  const std::size_t h = std::size_t(intr.height);
  std::vector<float> image(w * h * 3);
  std::vector<PixelCoord> pixels;
  BatchRenderer renderer;
  constexpr std::size_t kChunk = 4096;
  for (std::size_t begin = 0; begin < w * h; begin += kChunk) {
    const std::size_t end = std::min(w * h, begin + kChunk);
    pixels.clear();
    for (std::size_t i = begin; i < end; ++i) pixels.push_back(PixelCoord{int(i % w), int(i / w)});
    const std::vector<Ray> rays = generate_rays(intr, pose, pixels);
    renderer.forward(model, rays, settings, occupancy);
    std::copy(renderer.colors().begin(), renderer.colors().end(), image.begin() + std::ptrdiff_t(begin * 3));
  }
  return image;
}

} // namespace baangp
