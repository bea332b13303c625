#include "baangp/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "baangp/error.hpp"

namespace baangp {

C2FMode parse_c2f_mode(const std::string& name) {
  if (name == "off") return C2FMode::off;
  if (name == "vanilla") return C2FMode::vanilla;
  if (name == "substitution") return C2FMode::substitution;
  throw InvalidArgument("unknown c2f mode '" + name + "' (expected off, vanilla or substitution)");
}

std::string to_string(C2FMode mode) {
  switch (mode) {
  case C2FMode::off: return "off";
  case C2FMode::vanilla: return "vanilla";
  case C2FMode::substitution: return "substitution";
  }
  return "off";
}

void C2FSchedule::validate() const {
  if (!(start >= 0.0 && start < end && end <= 1.0)) {
    throw InvalidArgument("c2f: need 0 <= r_s < r_e <= 1");
  }
  if (levels < 1) throw InvalidArgument("c2f: levels must be >= 1");
}

double c2f_alpha(const C2FSchedule& s, double progress) {
  const double t = std::clamp((progress - s.start) / (s.end - s.start), 0.0, 1.0);
  return t * double(s.levels);
}

double window_weight(int level, double alpha) {
  const double x = alpha - double(level);
  if (x < 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // cos(x pi) written as sin((1/2 - x) pi) so x = 1/2 lands on exactly 0.
  return (1.0 - std::sin((0.5 - x) * std::numbers::pi)) / 2.0;
}

int substitution_level(int levels, double alpha) {
  // w_k > 0 exactly when alpha > k, so the highest such k is ceil(alpha) - 1.
  const double top = std::ceil(alpha) - 1.0;
  return int(std::clamp(top, 0.0, double(levels - 1)));
}

namespace {

void check_sizes(std::size_t a, std::size_t b, int levels, int features) {
  const std::size_t n = std::size_t(levels) * std::size_t(features);
  if (a != n || b != n) throw InvalidArgument("c2f: feature vector length mismatch");
}

} // namespace

void reweight_features(std::span<const float> in, std::span<float> out, int levels, int features,
                       double alpha) {
  check_sizes(in.size(), out.size(), levels, features);
  const int s = substitution_level(levels, alpha);
  const float* sub = in.data() + std::size_t(s) * features;
  for (int k = 0; k < levels; ++k) {
    const float w = float(window_weight(k, alpha));
    const float* src = in.data() + std::size_t(k) * features;
    float* dst = out.data() + std::size_t(k) * features;
    if (w == 1.0f) {
      std::copy(src, src + features, dst);
    } else if (w == 0.0f) {
      std::copy(sub, sub + features, dst);
    } else {
      for (int f = 0; f < features; ++f) dst[f] = w * src[f] + (1.0f - w) * sub[f];
    }
  }
}

void reweight_features_backward(std::span<const float> grad_out, std::span<float> grad_in, int levels,
                                int features, double alpha) {
  check_sizes(grad_out.size(), grad_in.size(), levels, features);
  const int s = substitution_level(levels, alpha);
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  float* gsub = grad_in.data() + std::size_t(s) * features;
  for (int k = 0; k < levels; ++k) {
    const float w = float(window_weight(k, alpha));
    const float* g = grad_out.data() + std::size_t(k) * features;
    float* gk = grad_in.data() + std::size_t(k) * features;
    for (int f = 0; f < features; ++f) {
      gk[f] += w * g[f];
      gsub[f] += (1.0f - w) * g[f];
    }
  }
}

void mask_features(std::span<const float> in, std::span<float> out, int levels, int features,
                   double alpha) {
  check_sizes(in.size(), out.size(), levels, features);
  for (int k = 0; k < levels; ++k) {
    const float w = float(window_weight(k, alpha));
    for (int f = 0; f < features; ++f) {
      const std::size_t i = std::size_t(k) * features + f;
      out[i] = w * in[i];
    }
  }
}

void mask_features_backward(std::span<const float> grad_out, std::span<float> grad_in, int levels,
                            int features, double alpha) {
  mask_features(grad_out, grad_in, levels, features, alpha);
}

void apply_c2f(C2FMode mode, std::span<const float> in, std::span<float> out, int levels, int features,
               double alpha) {
  switch (mode) {
  case C2FMode::off:
    check_sizes(in.size(), out.size(), levels, features);
    std::copy(in.begin(), in.end(), out.begin());
    return;
  case C2FMode::vanilla: mask_features(in, out, levels, features, alpha); return;
  case C2FMode::substitution: reweight_features(in, out, levels, features, alpha); return;
  }
}

void apply_c2f_backward(C2FMode mode, std::span<const float> grad_out, std::span<float> grad_in, int levels,
                        int features, double alpha) {
  switch (mode) {
  case C2FMode::off:
    check_sizes(grad_out.size(), grad_in.size(), levels, features);
    std::copy(grad_out.begin(), grad_out.end(), grad_in.begin());
    return;
  case C2FMode::vanilla: mask_features_backward(grad_out, grad_in, levels, features, alpha); return;
  case C2FMode::substitution: reweight_features_backward(grad_out, grad_in, levels, features, alpha); return;
  }
}

} // namespace baangp
