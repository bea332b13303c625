#pragma once

// Ray marching with occupancy culling, volume compositing and batched
// differentiable rendering of a hash-encoded radiance field.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "baangp/field.hpp"
#include "baangp/geometry.hpp"
#include "baangp/hashgrid.hpp"
#include "baangp/schedule.hpp"

namespace baangp {

using Rgb = std::array<float, 3>;

// Cached densities over a box, one value per cell, cells³ cells, x fastest.
struct OccupancyGrid {
  int resolution = 0;
  Eigen::Vector3f aabb_min = Eigen::Vector3f::Constant(-1.0f);
  Eigen::Vector3f aabb_max = Eigen::Vector3f::Constant(1.0f);
  float threshold = 0.01f;
  std::vector<float> densities;
  std::vector<std::uint8_t> occupancy;

  OccupancyGrid() = default;
  OccupancyGrid(int resolution, const Eigen::Vector3f& aabb_min, const Eigen::Vector3f& aabb_max, float threshold,
                float initial_density);

  std::size_t cell_count() const { return densities.size(); }
  // Cell containing p, or -1 outside the box.
  std::int64_t cell_of(const float* p) const;
  // Points outside the box are not covered by the grid and count as occupied.
  bool occupied_at(const float* p) const;
  Eigen::Vector3f cell_min(std::size_t index) const;
  Eigen::Vector3f cell_size() const { return (aabb_max - aabb_min) / float(resolution); }

  void fill(float density);
  void recompute();
  std::size_t occupied_count() const;

  void save(std::ostream& os) const;
  static OccupancyGrid load(std::istream& is);
};

// Slab test; false when the ray misses or the box lies behind the origin.
// entry_axis receives the axis of the entry face, or -1 when the origin is inside.
bool intersect_aabb(const Ray& ray, const Eigen::Vector3f& lo, const Eigen::Vector3f& hi, float& t_near,
                    float& t_far, int* entry_axis = nullptr);

struct RaySample {
  float t = 0.0f;
  float delta = 0.0f;
};

// Uniform steps t_near + (i + 1/2) step, i < floor((t_far - t_near) / step),
// skipping samples in free cells. Every kept sample has delta = step.
void march_ray(const Ray& ray, float step, const Eigen::Vector3f& lo, const Eigen::Vector3f& hi,
               const OccupancyGrid* occupancy, std::vector<RaySample>& out);
std::vector<RaySample> march_ray(const Ray& ray, float step, const OccupancyGrid& occupancy);

// Unit-sphere interior with uniform steps, then `far_samples` samples spaced
// uniformly in 1/h out to h = far_radius. Only interior samples are culled.
void march_ray_unbounded(const Ray& ray, float step, int far_samples, float far_radius, const OccupancyGrid* occupancy,
                         std::vector<RaySample>& out);

// points: n x 3 world positions; writes n densities.
using DensityFn = std::function<void(std::span<const float> points, std::span<float> sigma)>;

// densities <- max(densities * decay, sigma(jittered point per cell)), then recompute().
void update_occupancy(OccupancyGrid& grid, const DensityFn& density, float decay, std::uint64_t seed);

struct CompositeResult {
  Rgb rgb{};
  float opacity = 0.0f;
  std::size_t used = 0; // samples before early termination
};

// sigma, delta: n values; rgb: n x 3. min_transmittance > 0 enables early termination.
CompositeResult composite(std::span<const float> sigma, std::span<const float> rgb, std::span<const float> delta,
                          const Rgb& background, float min_transmittance = 0.0f);

// Gradients of (grad_rgb . color + grad_opacity * opacity). Outputs are overwritten.
void composite_backward(std::span<const float> sigma, std::span<const float> rgb, std::span<const float> delta,
                        const Rgb& background, const Rgb& grad_rgb, float grad_opacity, std::span<float> d_sigma,
                        std::span<float> d_rgb, std::span<float> d_delta);

// round(prev_rays * target / prev_samples) clamped to [min_rays, max_rays];
// prev_rays unchanged when prev_samples is 0.
int dynamic_batch_size(int prev_rays, std::int64_t prev_samples, std::int64_t target_samples, int min_rays,
                       int max_rays);

// Encoders plus decoder. grid_far (4D) is only used with the inverted-sphere contraction.
struct RadianceModel {
  SceneContraction contraction;
  HashGrid grid;
  HashGrid grid_far;
  FieldMLP mlp;

  bool unbounded() const { return contraction.mode == ContractionMode::inverted_sphere; }
  void validate() const;
};

struct ModelGradients {
  std::vector<float> grid, grid_far, mlp;

  void resize_for(const RadianceModel& model);
  void zero();
};

struct RenderSettings {
  float step = 0.01f;
  int far_samples = 32;
  float far_radius = 1e3f;
  Rgb background{1.0f, 1.0f, 1.0f};
  float min_transmittance = 0.0f;
  C2FMode c2f = C2FMode::off;
  double c2f_alpha = 0.0;
};

// Occupancy box for a model: the scene aabb, or the unit cube around the sphere.
void occupancy_bounds(const RadianceModel& model, Eigen::Vector3f& lo, Eigen::Vector3f& hi);

DensityFn make_density_fn(const RadianceModel& model, C2FMode mode, double alpha);

// Batched forward pass that keeps what backward() needs.
class BatchRenderer {
public:
  void forward(const RadianceModel& model, std::span<const Ray> rays, const RenderSettings& settings,
               const OccupancyGrid* occupancy);

  std::size_t ray_count() const { return ray_begin_.empty() ? 0 : ray_begin_.size() - 1; }
  std::size_t sample_count() const { return t_.size(); }
  std::span<const float> colors() const { return colors_; }
  std::span<const float> opacities() const { return opacity_; }

  // grad_rgb: rays x 3 (d loss / d color). Accumulates into grads; writes
  // d loss / d origin and d loss / d direction (rays x 3) when non-empty.
  void backward(const RadianceModel& model, std::span<const float> grad_rgb, ModelGradients& grads,
                std::span<float> grad_origin, std::span<float> grad_direction);

private:
  RenderSettings settings_;
  std::vector<Ray> rays_;
  std::vector<std::size_t> ray_begin_;
  std::vector<RaySample> scratch_;
  std::vector<float> t_, delta_;
  std::vector<float> unit_;     // samples x 4
  std::vector<float> jac_;      // samples x 12
  std::vector<std::uint8_t> far_;
  std::vector<float> raw_;      // samples x enc (before c2f)
  std::vector<float> encoded_;  // samples x enc
  std::vector<float> sh_;       // samples x sh_dim
  std::vector<float> near_grad_; // rays x 6: d t_near / d origin, d t_near / d direction
  std::vector<float> colors_, opacity_;
  FieldMLP::Workspace ws_;
  std::vector<float> d_sigma_, d_rgb_, d_delta_, d_encoded_, d_raw_, d_sh_;
};

// Forward-only, one sample at a time through FieldMLP::eval. Slow; used as an
// independent check on BatchRenderer.
CompositeResult render_ray_reference(const RadianceModel& model, const Ray& ray, const RenderSettings& settings,
                                     const OccupancyGrid* occupancy);

// Full image, HWC float32 rows of width*3.
std::vector<float> render_image(const RadianceModel& model, const CameraIntrinsics& intr, const Mat34& pose,
                                const RenderSettings& settings, const OccupancyGrid* occupancy);

} // namespace baangp
