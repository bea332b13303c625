#pragma once

// Radiance decoder: a density MLP over hash features and a color MLP over
// geometry features plus spherical-harmonics-encoded view direction.

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace baangp {

// Real spherical harmonics for bands l < degree (degree in [1, 4]); writes degree^2 values.
// Throws InvalidArgument when `dir` is not unit length within 1e-6 (plus float slack).
void sh_encode(std::span<const float, 3> dir, int degree, std::span<float> out);
// Accumulates d(upstream . sh(dir))/d(dir) into grad_dir.
void sh_encode_backward(std::span<const float, 3> dir, int degree, std::span<const float> upstream,
                        std::span<float, 3> grad_dir);

// Fully connected ReLU network with a linear output layer. Holds only the
// shape; parameters live in caller-owned spans laid out per layer as
// (weights in x out, input-major) followed by (bias out).
class Mlp {
public:
  struct Workspace {
    std::size_t rows = 0;
    // acts[0] is the input; acts[l] the post-ReLU output of layer l-1; back() is the raw output.
    std::vector<std::vector<float>> acts;
    std::vector<float> grad_a, grad_b;
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> widths);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  int layer_count() const { return int(widths_.size()) - 1; }
  const std::vector<int>& widths() const { return widths_; }
  std::size_t param_count() const { return offsets_.back(); }

  // He-style uniform weights (bound sqrt(6 / fan_in)), zero biases.
  void init_params(std::span<float> params, std::uint64_t seed) const;

  void forward(std::span<const float> params, std::span<const float> x, std::size_t rows, Workspace& ws) const;
  std::span<const float> output(const Workspace& ws) const { return ws.acts.back(); }
  std::span<float> output(Workspace& ws) const { return ws.acts.back(); }
  // grad_out is d loss / d raw output. Accumulates into param_grad; writes grad_in when non-empty.
  void backward(std::span<const float> params, Workspace& ws, std::span<const float> grad_out,
                std::span<float> param_grad, std::span<float> grad_in) const;

private:
  std::size_t weight_offset(int layer) const { return offsets_[std::size_t(layer)]; }
  std::size_t bias_offset(int layer) const {
    return offsets_[std::size_t(layer)] + std::size_t(widths_[std::size_t(layer)]) * widths_[std::size_t(layer) + 1];
  }

  std::vector<int> widths_{1, 1};
  std::vector<std::size_t> offsets_{0, 2};
};

struct FieldMlpConfig {
  int encoded_dim = 32;
  int density_hidden = 64;
  int geo_features = 15;
  int color_hidden = 64;
  int sh_degree = 4;
};

inline constexpr float kDensityLogitClamp = 15.0f;

struct FieldSample {
  float sigma = 0.0f;
  std::array<float, 3> rgb{};
};

class FieldMLP {
public:
  struct Workspace {
    std::size_t rows = 0;
    Mlp::Workspace density, color;
    std::vector<float> color_in; // rows x (geo + sh)
    std::vector<float> sigma;    // rows
    std::vector<float> rgb;      // rows x 3
    std::vector<float> grad_density_out, grad_color_out, grad_color_in;
  };

  FieldMLP() = default;
  FieldMLP(const FieldMlpConfig& config, std::uint64_t seed);

  const FieldMlpConfig& config() const { return config_; }
  int sh_dim() const { return config_.sh_degree * config_.sh_degree; }
  std::span<float> params() { return params_; }
  std::span<const float> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  // Density only; skips the color head. `sigma` has `rows` entries.
  void density(std::span<const float> encoded, std::size_t rows, Mlp::Workspace& ws,
               std::span<float> sigma) const;

  // encoded: rows x encoded_dim; sh: rows x sh_dim.
  void forward(std::span<const float> encoded, std::span<const float> sh, std::size_t rows,
               Workspace& ws) const;
  void backward(Workspace& ws, std::span<const float> grad_sigma, std::span<const float> grad_rgb,
                std::span<float> param_grad, std::span<float> grad_encoded, std::span<float> grad_sh) const;

  // Single-sample evaluation; `direction` must be unit length.
  FieldSample eval(std::span<const float> encoded, std::span<const float, 3> direction) const;

  void save(std::ostream& os) const;
  static FieldMLP load(std::istream& is);

private:
  std::span<const float> density_params() const {
    return std::span<const float>(params_).first(density_.param_count());
  }
  std::span<const float> color_params() const {
    return std::span<const float>(params_).subspan(density_.param_count());
  }

  FieldMlpConfig config_;
  Mlp density_;
  Mlp color_;
  std::vector<float> params_;
};

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

} // namespace baangp
