#pragma once

// Multiresolution hash encoding for 2-, 3- and 4-dimensional inputs.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace baangp {

inline constexpr int kMaxGridDim = 4;

struct HashGridConfig {
  int dim = 3;
  int levels = 16;
  std::uint32_t table_size = 1u << 14; // rows per level, power of two
  int features = 2;
  std::uint32_t base_resolution = 16;
  std::uint32_t max_resolution = 2048;

  void validate() const;
  // Per-level growth factor b; 1 when levels == 1.
  double growth_factor() const;
  int output_dim() const { return levels * features; }
};

std::vector<std::uint32_t> level_resolutions(const HashGridConfig& config);

// XOR of coordinate * prime, reduced mod table_size (a power of two).
std::uint32_t spatial_hash(std::span<const std::uint32_t> vertex, std::uint32_t table_size);

// The 2^d corners touched by one level at one point: row indices and
// d-linear interpolation weights, plus the per-axis fractions needed for the
// input derivative.
struct LevelStencil {
  std::array<std::uint32_t, 16> rows{};
  std::array<float, 16> weights{};
  std::array<float, kMaxGridDim> frac{};
  std::array<std::uint32_t, kMaxGridDim> cell{};
};

class HashGrid {
public:
  HashGrid() = default;
  // Tables are initialised uniformly in [-init_scale, init_scale] from `seed`.
  HashGrid(const HashGridConfig& config, std::uint64_t seed, float init_scale = 1e-4f);

  const HashGridConfig& config() const { return config_; }
  const std::vector<std::uint32_t>& resolutions() const { return resolutions_; }
  int output_dim() const { return config_.output_dim(); }

  std::span<float> params() { return tables_; }
  std::span<const float> params() const { return tables_; }
  std::size_t param_count() const { return tables_.size(); }

  // True when level `l` stores every vertex in its own row (no hashing).
  bool is_dense_level(int level) const;
  std::uint32_t vertex_row(int level, std::span<const std::uint32_t> vertex) const;

  LevelStencil stencil(int level, std::span<const float> x) const;

  // x in [0,1]^d; `out` has levels*features entries. `level_weights`, when
  // non-empty, scales each level block.
  void encode(std::span<const float> x, std::span<float> out,
              std::span<const float> level_weights = {}) const;

  // Accumulates table gradients into `table_grad` (same layout as params()) and
  // writes d(upstream . encode(x))/dx into `input_grad` when non-empty.
  void encode_backward(std::span<const float> x, std::span<const float> upstream,
                       std::span<float> table_grad, std::span<float> input_grad,
                       std::span<const float> level_weights = {}) const;

  void save(std::ostream& os) const;
  static HashGrid load(std::istream& is);

private:
  std::size_t level_offset(int level) const {
    return std::size_t(level) * config_.table_size * std::size_t(config_.features);
  }
  void check_input(std::span<const float> x) const;

  HashGridConfig config_;
  std::vector<std::uint32_t> resolutions_;
  std::vector<float> tables_;
};

} // namespace baangp
