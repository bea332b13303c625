#include "baangp/optim.hpp"

#include <algorithm>
#include <cmath>

#include "baangp/error.hpp"

namespace baangp {

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, float lr) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw InvalidArgument("adam_step: parameter, gradient and moment lengths differ");
  }
  ++state.step;
  const float b1 = state.beta1;
  const float b2 = state.beta2;
  const float bias1 = 1.0f - static_cast<float>(std::pow(double(b1), double(state.step)));
  const float bias2 = 1.0f - static_cast<float>(std::pow(double(b2), double(state.step)));
  const float step_size = lr / bias1;
  const float inv_sqrt_bias2 = 1.0f / std::sqrt(bias2);
  float* m = state.first_moment.data();
  float* v = state.second_moment.data();
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grads[i];
    m[i] = b1 * m[i] + (1.0f - b1) * g;
    v[i] = b2 * v[i] + (1.0f - b2) * g * g;
    const float denom = std::sqrt(v[i]) * inv_sqrt_bias2 + state.epsilon;
    params[i] -= step_size * m[i] / denom;
  }
}

LrSchedule LrSchedule::constant(double lr) {
  LrSchedule s;
  s.kind = Kind::warmup_step_decay;
  s.base_lr = s.peak_lr = s.final_lr = lr;
  return s;
}

LrSchedule LrSchedule::warmup_step(double base, double peak, int warmup, std::vector<int> milestones,
                                   double factor) {
  LrSchedule s;
  s.kind = Kind::warmup_step_decay;
  s.base_lr = base;
  s.peak_lr = peak;
  s.final_lr = peak;
  s.warmup_iters = warmup;
  s.milestones = std::move(milestones);
  s.decay_factor = factor;
  return s;
}

LrSchedule LrSchedule::exponential(double start, double end, int total) {
  LrSchedule s;
  s.kind = Kind::exponential_decay;
  s.base_lr = start;
  s.peak_lr = start;
  s.final_lr = end;
  s.total_iters = total;
  return s;
}

void LrSchedule::validate() const {
  if (!(base_lr >= 0.0) || !(peak_lr >= 0.0) || !(final_lr >= 0.0)) {
    throw InvalidArgument("lr schedule: learning rates must be non-negative");
  }
  if (warmup_iters < 0) throw InvalidArgument("lr schedule: negative warmup");
  if (!std::is_sorted(milestones.begin(), milestones.end())) {
    throw InvalidArgument("lr schedule: milestones must be sorted");
  }
  if (!(decay_factor > 0.0)) throw InvalidArgument("lr schedule: decay factor must be positive");
  if (kind == Kind::exponential_decay) {
    if (total_iters <= 0) throw InvalidArgument("lr schedule: exponential decay needs total_iters > 0");
    if ((base_lr == 0.0) != (final_lr == 0.0)) {
      throw InvalidArgument("lr schedule: exponential decay cannot interpolate to or from zero");
    }
  }
}

double lr_at(const LrSchedule& s, int iter) {
  iter = std::max(iter, 0);
  if (s.kind == LrSchedule::Kind::exponential_decay) {
    if (s.base_lr == 0.0) return 0.0;
    const double t = std::min(1.0, double(iter) / double(std::max(s.total_iters, 1)));
    return s.base_lr * std::pow(s.final_lr / s.base_lr, t);
  }
  if (iter < s.warmup_iters) {
    const double t = double(iter) / double(s.warmup_iters);
    return s.base_lr + (s.peak_lr - s.base_lr) * t;
  }
  const auto passed = std::upper_bound(s.milestones.begin(), s.milestones.end(), iter) -
                      s.milestones.begin();
  return s.peak_lr * std::pow(s.decay_factor, double(passed));
}

} // namespace baangp
