#include "baangp/field.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "baangp/binary_io.hpp"
#include "baangp/dual.hpp"
#include "baangp/error.hpp"
#include "baangp/kernels.hpp"

namespace baangp {
namespace {

template <class T>
void sh_basis(T x, T y, T z, int degree, T* out) {
  out[0] = T(0.28209479177387814);
  if (degree <= 1) return;
  out[1] = T(-0.48860251190291987) * y;
  out[2] = T(0.48860251190291987) * z;
  out[3] = T(-0.48860251190291987) * x;
  if (degree <= 2) return;
  const T xx = x * x, yy = y * y, zz = z * z;
  const T xy = x * y, yz = y * z, xz = x * z;
  out[4] = T(1.0925484305920792) * xy;
  out[5] = T(-1.0925484305920792) * yz;
  out[6] = T(0.94617469575755997) * zz - T(0.31539156525251999);
  out[7] = T(-1.0925484305920792) * xz;
  out[8] = T(0.54627421529603959) * xx - T(0.54627421529603959) * yy;
  if (degree <= 3) return;
  out[9] = T(0.59004358992664352) * y * (T(-3.0) * xx + yy);
  out[10] = T(2.8906114426405538) * xy * z;
  out[11] = T(0.45704579946446572) * y * (T(1.0) - T(5.0) * zz);
  out[12] = T(0.3731763325901154) * z * (T(5.0) * zz - T(3.0));
  out[13] = T(0.45704579946446572) * x * (T(1.0) - T(5.0) * zz);
  out[14] = T(1.4453057213202769) * z * (xx - yy);
  out[15] = T(0.59004358992664352) * x * (T(3.0) * yy - xx);
}

void check_sh_args(std::span<const float, 3> dir, int degree) {
  if (degree < 1 || degree > 4) throw InvalidArgument("sh_encode: degree must be in [1, 4]");
  const double n = std::sqrt(double(dir[0]) * dir[0] + double(dir[1]) * dir[1] + double(dir[2]) * dir[2]);
  // 1e-6 on the norm, widened by float32 rounding of a normalized vector.
  if (!(std::abs(n - 1.0) <= 1e-6 + 4.0 * 1.2e-7)) {
    throw InvalidArgument("sh_encode: direction is not unit length (norm " + std::to_string(n) + ")");
  }
}

} // namespace

void sh_encode(std::span<const float, 3> dir, int degree, std::span<float> out) {
  check_sh_args(dir, degree);
  if (out.size() != std::size_t(degree * degree)) throw InvalidArgument("sh_encode: output size mismatch");
  sh_basis<float>(dir[0], dir[1], dir[2], degree, out.data());
}

void sh_encode_backward(std::span<const float, 3> dir, int degree, std::span<const float> upstream,
                        std::span<float, 3> grad_dir) {
  check_sh_args(dir, degree);
  if (upstream.size() != std::size_t(degree * degree)) throw InvalidArgument("sh_encode: upstream size mismatch");
  using D = Dual<3, float>;
  D basis[16];
  sh_basis<D>(D::seed(dir[0], 0), D::seed(dir[1], 1), D::seed(dir[2], 2), degree, basis);
  for (int k = 0; k < degree * degree; ++k) {
    for (int i = 0; i < 3; ++i) grad_dir[std::size_t(i)] += upstream[std::size_t(k)] * basis[k].d[std::size_t(i)];
  }
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw InvalidArgument("mlp: need at least input and output widths");
  for (int w : widths_) {
    if (w < 1) throw InvalidArgument("mlp: widths must be positive");
  }
  offsets_.assign(1, 0);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t n = std::size_t(widths_[l]) * widths_[l + 1] + std::size_t(widths_[l + 1]);
    offsets_.push_back(offsets_.back() + n);
  }
}

void Mlp::init_params(std::span<float> params, std::uint64_t seed) const {
  if (params.size() != param_count()) throw InvalidArgument("mlp: parameter count mismatch");
  std::mt19937_64 rng(seed);
  for (int l = 0; l < layer_count(); ++l) {
    const int fan_in = widths_[std::size_t(l)];
    const float bound = std::sqrt(6.0f / float(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    float* w = params.data() + weight_offset(l);
    const std::size_t nw = std::size_t(fan_in) * widths_[std::size_t(l) + 1];
    for (std::size_t k = 0; k < nw; ++k) w[k] = dist(rng);
    std::fill_n(params.data() + bias_offset(l), widths_[std::size_t(l) + 1], 0.0f);
  }
}

void Mlp::forward(std::span<const float> params, std::span<const float> x, std::size_t rows,
                  Workspace& ws) const {
  if (params.size() != param_count()) throw InvalidArgument("mlp: parameter count mismatch");
  if (x.size() != rows * std::size_t(input_dim())) {
    throw InvalidArgument("mlp: input has " + std::to_string(x.size()) + " values, expected " +
                          std::to_string(rows * std::size_t(input_dim())));
  }
  const auto& k = simd::active_kernels();
  ws.rows = rows;
  ws.acts.resize(widths_.size());
  ws.acts[0].assign(x.begin(), x.end());
  for (int l = 0; l < layer_count(); ++l) {
    const std::size_t in = std::size_t(widths_[std::size_t(l)]);
    const std::size_t out = std::size_t(widths_[std::size_t(l) + 1]);
    auto& y = ws.acts[std::size_t(l) + 1];
    y.resize(rows * out);
    k.forward(ws.acts[std::size_t(l)].data(), rows, in, params.data() + weight_offset(l),
              params.data() + bias_offset(l), out, y.data());
    if (l + 1 < layer_count()) k.relu(y.data(), y.size());
  }
}

void Mlp::backward(std::span<const float> params, Workspace& ws, std::span<const float> grad_out,
                   std::span<float> param_grad, std::span<float> grad_in) const {
  const std::size_t rows = ws.rows;
  if (grad_out.size() != rows * std::size_t(output_dim())) throw InvalidArgument("mlp: grad_out size mismatch");
  if (param_grad.size() != param_count()) throw InvalidArgument("mlp: param_grad size mismatch");
  if (!grad_in.empty() && grad_in.size() != rows * std::size_t(input_dim())) {
    throw InvalidArgument("mlp: grad_in size mismatch");
  }
  const auto& k = simd::active_kernels();
  ws.grad_a.assign(grad_out.begin(), grad_out.end());
  for (int l = layer_count() - 1; l >= 0; --l) {
    const std::size_t in = std::size_t(widths_[std::size_t(l)]);
    const std::size_t out = std::size_t(widths_[std::size_t(l) + 1]);
    const auto& x = ws.acts[std::size_t(l)];
    k.backward_params(ws.grad_a.data(), rows, out, x.data(), in, param_grad.data() + weight_offset(l),
                      param_grad.data() + bias_offset(l));
    if (l > 0) {
      ws.grad_b.resize(rows * in);
      k.backward_input(ws.grad_a.data(), rows, out, params.data() + weight_offset(l), in, ws.grad_b.data());
      k.relu_backward(x.data(), ws.grad_b.data(), ws.grad_b.size());
      std::swap(ws.grad_a, ws.grad_b);
    } else if (!grad_in.empty()) {
      k.backward_input(ws.grad_a.data(), rows, out, params.data() + weight_offset(l), in, grad_in.data());
    }
  }
}

// ---------------------------------------------------------------------------

FieldMLP::FieldMLP(const FieldMlpConfig& config, std::uint64_t seed)
    : config_(config),
      density_({config.encoded_dim, config.density_hidden, 1 + config.geo_features}),
      color_({config.geo_features + config.sh_degree * config.sh_degree, config.color_hidden, config.color_hidden, 3}) {
  if (config.sh_degree < 1 || config.sh_degree > 4) throw InvalidArgument("field: sh degree must be in [1, 4]");
  params_.resize(density_.param_count() + color_.param_count());
  density_.init_params(std::span<float>(params_).first(density_.param_count()), seed);
  color_.init_params(std::span<float>(params_).subspan(density_.param_count()), seed ^ 0x9e3779b97f4a7c15ull);
}

namespace {

inline float density_activation(float logit) {
  return std::exp(std::clamp(logit, -kDensityLogitClamp, kDensityLogitClamp));
}

} // namespace

void FieldMLP::density(std::span<const float> encoded, std::size_t rows, Mlp::Workspace& ws,
                       std::span<float> sigma) const {
  if (sigma.size() != rows) throw InvalidArgument("field: sigma size mismatch");
  density_.forward(density_params(), encoded, rows, ws);
  const auto out = density_.output(ws);
  const std::size_t stride = std::size_t(density_.output_dim());
  for (std::size_t r = 0; r < rows; ++r) sigma[r] = density_activation(out[r * stride]);
}

void FieldMLP::forward(std::span<const float> encoded, std::span<const float> sh, std::size_t rows,
                       Workspace& ws) const {
  const std::size_t shd = std::size_t(sh_dim());
  if (encoded.size() != rows * std::size_t(config_.encoded_dim)) {
    throw InvalidArgument("field: encoded width mismatch (got " + std::to_string(encoded.size()) + " values for " +
                          std::to_string(rows) + " rows of " + std::to_string(config_.encoded_dim) + ")");
  }
  if (sh.size() != rows * shd) throw InvalidArgument("field: sh width mismatch");
  ws.rows = rows;
  density_.forward(density_params(), encoded, rows, ws.density);
  const auto dout = density_.output(ws.density);
  const std::size_t dstride = std::size_t(density_.output_dim());
  const std::size_t geo = std::size_t(config_.geo_features);
  const std::size_t cin = geo + shd;
  ws.sigma.resize(rows);
  ws.color_in.resize(rows * cin);
  for (std::size_t r = 0; r < rows; ++r) {
    ws.sigma[r] = density_activation(dout[r * dstride]);
    std::copy_n(dout.data() + r * dstride + 1, geo, ws.color_in.data() + r * cin);
    std::copy_n(sh.data() + r * shd, shd, ws.color_in.data() + r * cin + geo);
  }
  color_.forward(color_params(), ws.color_in, rows, ws.color);
  const auto cout = color_.output(ws.color);
  ws.rgb.resize(rows * 3);
  for (std::size_t k = 0; k < rows * 3; ++k) ws.rgb[k] = sigmoid(cout[k]);
}

void FieldMLP::backward(Workspace& ws, std::span<const float> grad_sigma, std::span<const float> grad_rgb,
                        std::span<float> param_grad, std::span<float> grad_encoded, std::span<float> grad_sh) const {
  const std::size_t rows = ws.rows;
  const std::size_t shd = std::size_t(sh_dim());
  const std::size_t geo = std::size_t(config_.geo_features);
  const std::size_t cin = geo + shd;
  if (grad_sigma.size() != rows || grad_rgb.size() != rows * 3) throw InvalidArgument("field: gradient size mismatch");
  if (param_grad.size() != params_.size()) throw InvalidArgument("field: param_grad size mismatch");
  if (!grad_sh.empty() && grad_sh.size() != rows * shd) throw InvalidArgument("field: grad_sh size mismatch");

  ws.grad_color_out.resize(rows * 3);
  for (std::size_t k = 0; k < rows * 3; ++k) {
    const float c = ws.rgb[k];
    ws.grad_color_out[k] = grad_rgb[k] * c * (1.0f - c);
  }
  ws.grad_color_in.assign(rows * cin, 0.0f);
  auto color_grad = param_grad.subspan(density_.param_count());
  color_.backward(color_params(), ws.color, ws.grad_color_out, color_grad, ws.grad_color_in);

  const std::size_t dstride = std::size_t(density_.output_dim());
  const auto dout = density_.output(ws.density);
  ws.grad_density_out.resize(rows * dstride);
  for (std::size_t r = 0; r < rows; ++r) {
    const float logit = dout[r * dstride];
    const bool active = logit > -kDensityLogitClamp && logit < kDensityLogitClamp;
    ws.grad_density_out[r * dstride] = active ? grad_sigma[r] * ws.sigma[r] : 0.0f;
    std::copy_n(ws.grad_color_in.data() + r * cin, geo, ws.grad_density_out.data() + r * dstride + 1);
    if (!grad_sh.empty()) std::copy_n(ws.grad_color_in.data() + r * cin + geo, shd, grad_sh.data() + r * shd);
  }
  density_.backward(density_params(), ws.density, ws.grad_density_out,
                    param_grad.first(density_.param_count()), grad_encoded);
}

FieldSample FieldMLP::eval(std::span<const float> encoded, std::span<const float, 3> direction) const {
  std::vector<float> sh(static_cast<std::size_t>(sh_dim()));
  sh_encode(direction, config_.sh_degree, sh);
  Workspace ws;
  forward(encoded, sh, 1, ws);
  return FieldSample{ws.sigma[0], {ws.rgb[0], ws.rgb[1], ws.rgb[2]}};
}

// Layout: "FMLP", u32 version, u32 encoded_dim, density_hidden, geo_features,
// color_hidden, sh_degree, then u64 count + f32 parameters.
void FieldMLP::save(std::ostream& os) const {
  binio::write_tag(os, "FMLP");
  binio::write_u32(os, 1);
  binio::write_u32(os, std::uint32_t(config_.encoded_dim));
  binio::write_u32(os, std::uint32_t(config_.density_hidden));
  binio::write_u32(os, std::uint32_t(config_.geo_features));
  binio::write_u32(os, std::uint32_t(config_.color_hidden));
  binio::write_u32(os, std::uint32_t(config_.sh_degree));
  binio::write_f32_vector(os, params_);
}

FieldMLP FieldMLP::load(std::istream& is) {
  binio::expect_tag(is, "FMLP");
  if (binio::read_u32(is) != 1) throw DataError("field checkpoint: unsupported version");
  FieldMlpConfig cfg;
  cfg.encoded_dim = int(binio::read_u32(is));
  cfg.density_hidden = int(binio::read_u32(is));
  cfg.geo_features = int(binio::read_u32(is));
  cfg.color_hidden = int(binio::read_u32(is));
  cfg.sh_degree = int(binio::read_u32(is));
  if (cfg.encoded_dim < 1 || cfg.encoded_dim > 4096 || cfg.density_hidden < 1 || cfg.density_hidden > 4096 ||
      cfg.geo_features < 1 || cfg.geo_features > 4096 || cfg.color_hidden < 1 || cfg.color_hidden > 4096 ||
      cfg.sh_degree < 1 || cfg.sh_degree > 4) {
    throw DataError("field checkpoint: bad configuration header");
  }
  FieldMLP f(cfg, 0);
  auto p = binio::read_f32_vector(is);
  if (p.size() != f.params_.size()) throw DataError("field checkpoint: parameter count mismatch");
  f.params_ = std::move(p);
  return f;
}

} // namespace baangp
