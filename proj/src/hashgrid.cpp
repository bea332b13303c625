#include "baangp/hashgrid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "baangp/binary_io.hpp"
#include "baangp/error.hpp"

namespace baangp {
namespace {

// pi_1..pi_3 are the classic spatial-hash primes; the fourth extends them to
// the 4D (direction, inverse distance) inputs of the outer grid.
constexpr std::array<std::uint32_t, kMaxGridDim> kPrimes = {1u, 2654435761u, 805459861u, 2097192405u};

} // namespace

void HashGridConfig::validate() const {
  if (dim < 1 || dim > kMaxGridDim) throw InvalidArgument("hashgrid: dim must be in [1, 4]");
  if (levels < 1) throw InvalidArgument("hashgrid: levels must be >= 1");
  if (table_size == 0 || !std::has_single_bit(table_size)) {
    throw InvalidArgument("hashgrid: table size must be a power of two");
  }
  if (features < 1) throw InvalidArgument("hashgrid: features must be >= 1");
  if (base_resolution < 1) throw InvalidArgument("hashgrid: base resolution must be >= 1");
  if (max_resolution < base_resolution) {
    throw InvalidArgument("hashgrid: max resolution must be >= base resolution");
  }
}

double HashGridConfig::growth_factor() const {
  if (levels <= 1) return 1.0;
  return std::exp((std::log(double(max_resolution)) - std::log(double(base_resolution))) /
                  double(levels - 1));
}

std::vector<std::uint32_t> level_resolutions(const HashGridConfig& config) {
  config.validate();
  if (config.levels == 1) return {config.base_resolution};
  const double b = config.growth_factor();
  std::vector<std::uint32_t> res(std::size_t(config.levels));
  for (int l = 0; l < config.levels; ++l) {
    // The small epsilon keeps exact powers (b = 1) from flooring one below.
    const double n = double(config.base_resolution) * std::pow(b, double(l));
    res[std::size_t(l)] = std::uint32_t(std::floor(n + 1e-6));
  }
  return res;
}

std::uint32_t spatial_hash(std::span<const std::uint32_t> vertex, std::uint32_t table_size) {
  std::uint32_t h = 0;
  for (std::size_t i = 0; i < vertex.size() && i < kPrimes.size(); ++i) {
    h ^= vertex[i] * kPrimes[i];
  }
  return h & (table_size - 1u);
}

HashGrid::HashGrid(const HashGridConfig& config, std::uint64_t seed, float init_scale)
    : config_(config), resolutions_(level_resolutions(config)) {
  tables_.resize(std::size_t(config.levels) * config.table_size * std::size_t(config.features));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-init_scale, init_scale);
  for (float& v : tables_) v = dist(rng);
}

bool HashGrid::is_dense_level(int level) const {
  const std::uint64_t side = std::uint64_t(resolutions_[std::size_t(level)]) + 1;
  std::uint64_t count = 1;
  for (int i = 0; i < config_.dim; ++i) {
    count *= side;
    if (count > config_.table_size) return false;
  }
  return true;
}

std::uint32_t HashGrid::vertex_row(int level, std::span<const std::uint32_t> vertex) const {
  if (is_dense_level(level)) {
    // Row-major over (N+1)^d vertices, last axis fastest.
    const std::uint32_t side = resolutions_[std::size_t(level)] + 1;
    std::uint32_t row = 0;
    for (int i = 0; i < config_.dim; ++i) row = row * side + vertex[std::size_t(i)];
    return row;
  }
  return spatial_hash(vertex.first(std::size_t(config_.dim)), config_.table_size);
}

void HashGrid::check_input(std::span<const float> x) const {
  if (x.size() != std::size_t(config_.dim)) {
    throw InvalidArgument("hashgrid: input has " + std::to_string(x.size()) + " components, expected " +
                          std::to_string(config_.dim));
  }
  for (float v : x) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw OutOfDomain("hashgrid: input coordinate " + std::to_string(v) + " outside [0,1]");
    }
  }
}

LevelStencil HashGrid::stencil(int level, std::span<const float> x) const {
  const int d = config_.dim;
  const std::uint32_t n = resolutions_[std::size_t(level)];
  LevelStencil s;
  for (int i = 0; i < d; ++i) {
    const float xl = x[std::size_t(i)] * float(n);
    // Cell whose upper face contains xl: gives the left-sided derivative on
    // interior vertices and keeps x = 1 inside the last cell.
    const float c = std::ceil(xl) - 1.0f;
    const std::uint32_t cell = std::uint32_t(std::clamp(c, 0.0f, float(n - 1)));
    s.cell[std::size_t(i)] = cell;
    s.frac[std::size_t(i)] = xl - float(cell);
  }
  const int corners = 1 << d;
  std::array<std::uint32_t, kMaxGridDim> vertex{};
  for (int c = 0; c < corners; ++c) {
    float w = 1.0f;
    for (int i = 0; i < d; ++i) {
      const bool hi = (c >> i) & 1;
      vertex[std::size_t(i)] = s.cell[std::size_t(i)] + (hi ? 1u : 0u);
      w *= hi ? s.frac[std::size_t(i)] : 1.0f - s.frac[std::size_t(i)];
    }
    s.rows[std::size_t(c)] = vertex_row(level, std::span<const std::uint32_t>(vertex.data(), std::size_t(d)));
    s.weights[std::size_t(c)] = w;
  }
  return s;
}

void HashGrid::encode(std::span<const float> x, std::span<float> out,
                      std::span<const float> level_weights) const {
  check_input(x);
  const int F = config_.features;
  if (out.size() != std::size_t(output_dim())) throw InvalidArgument("hashgrid: output size mismatch");
  if (!level_weights.empty() && level_weights.size() != std::size_t(config_.levels)) {
    throw InvalidArgument("hashgrid: level weight count mismatch");
  }
  const int corners = 1 << config_.dim;
  for (int l = 0; l < config_.levels; ++l) {
    const LevelStencil s = stencil(l, x);
    const float* table = tables_.data() + level_offset(l);
    float* dst = out.data() + std::size_t(l) * F;
    std::fill(dst, dst + F, 0.0f);
    for (int c = 0; c < corners; ++c) {
      const float w = s.weights[std::size_t(c)];
      const float* row = table + std::size_t(s.rows[std::size_t(c)]) * F;
      for (int f = 0; f < F; ++f) dst[f] += w * row[f];
    }
    if (!level_weights.empty()) {
      for (int f = 0; f < F; ++f) dst[f] *= level_weights[std::size_t(l)];
    }
  }
}

void HashGrid::encode_backward(std::span<const float> x, std::span<const float> upstream,
                               std::span<float> table_grad, std::span<float> input_grad,
                               std::span<const float> level_weights) const {
  check_input(x);
  const int F = config_.features;
  const int d = config_.dim;
  if (upstream.size() != std::size_t(output_dim())) throw InvalidArgument("hashgrid: upstream size mismatch");
  if (!table_grad.empty() && table_grad.size() != tables_.size()) {
    throw InvalidArgument("hashgrid: table gradient size mismatch");
  }
  if (!input_grad.empty() && input_grad.size() != std::size_t(d)) {
    throw InvalidArgument("hashgrid: input gradient size mismatch");
  }
  if (!level_weights.empty() && level_weights.size() != std::size_t(config_.levels)) {
    throw InvalidArgument("hashgrid: level weight count mismatch");
  }
  std::fill(input_grad.begin(), input_grad.end(), 0.0f);
  const int corners = 1 << d;
  for (int l = 0; l < config_.levels; ++l) {
    const float lw = level_weights.empty() ? 1.0f : level_weights[std::size_t(l)];
    const float* up = upstream.data() + std::size_t(l) * F;
    bool any = false;
    for (int f = 0; f < F; ++f) any |= (up[f] != 0.0f);
    if (!any || lw == 0.0f) continue;
    const LevelStencil s = stencil(l, x);
    const std::size_t off = level_offset(l);
    if (!table_grad.empty()) {
      for (int c = 0; c < corners; ++c) {
        const float w = s.weights[std::size_t(c)] * lw;
        float* g = table_grad.data() + off + std::size_t(s.rows[std::size_t(c)]) * F;
        for (int f = 0; f < F; ++f) g[f] += w * up[f];
      }
    }
    if (!input_grad.empty()) {
      const float scale = float(resolutions_[std::size_t(l)]) * lw;
      const float* table = tables_.data() + off;
      for (int c = 0; c < corners; ++c) {
        const float* row = table + std::size_t(s.rows[std::size_t(c)]) * F;
        float dot = 0.0f;
        for (int f = 0; f < F; ++f) dot += row[f] * up[f];
        if (dot == 0.0f) continue;
        for (int i = 0; i < d; ++i) {
          // d weight / d frac_i: sign from the corner bit, product over the other axes.
          float dw = ((c >> i) & 1) ? 1.0f : -1.0f;
          for (int j = 0; j < d; ++j) {
            if (j == i) continue;
            dw *= ((c >> j) & 1) ? s.frac[std::size_t(j)] : 1.0f - s.frac[std::size_t(j)];
          }
          input_grad[std::size_t(i)] += scale * dw * dot;
        }
      }
    }
  }
}

// Layout: "HGRD", u32 version, u32 dim, u32 levels, u32 table_size, u32 features,
// u32 base_resolution, u32 max_resolution, then levels*table_size*features f32.
void HashGrid::save(std::ostream& os) const {
  binio::write_tag(os, "HGRD");
  binio::write_u32(os, 1);
  binio::write_u32(os, std::uint32_t(config_.dim));
  binio::write_u32(os, std::uint32_t(config_.levels));
  binio::write_u32(os, config_.table_size);
  binio::write_u32(os, std::uint32_t(config_.features));
  binio::write_u32(os, config_.base_resolution);
  binio::write_u32(os, config_.max_resolution);
  binio::write_f32s(os, tables_);
}

HashGrid HashGrid::load(std::istream& is) {
  binio::expect_tag(is, "HGRD");
  const std::uint32_t version = binio::read_u32(is);
  if (version != 1) throw DataError("hashgrid: unsupported version " + std::to_string(version));
  HashGridConfig cfg;
  cfg.dim = int(binio::read_u32(is));
  cfg.levels = int(binio::read_u32(is));
  cfg.table_size = binio::read_u32(is);
  cfg.features = int(binio::read_u32(is));
  cfg.base_resolution = binio::read_u32(is);
  cfg.max_resolution = binio::read_u32(is);
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("hashgrid checkpoint: ") + e.what());
  }
  if (std::uint64_t(cfg.levels) * cfg.table_size * std::uint64_t(cfg.features) > (1ull << 31)) {
    throw DataError("hashgrid checkpoint: table too large");
  }
  HashGrid grid;
  grid.config_ = cfg;
  grid.resolutions_ = level_resolutions(cfg);
  grid.tables_.resize(std::size_t(cfg.levels) * cfg.table_size * std::size_t(cfg.features));
  binio::read_f32s(is, grid.tables_);
  return grid;
}

} // namespace baangp
