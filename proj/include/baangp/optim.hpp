#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace baangp {

struct AdamState {
  std::vector<float> first_moment;
  std::vector<float> second_moment;
  std::int64_t step = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;

  AdamState() = default;
  explicit AdamState(std::size_t n) : first_moment(n, 0.0f), second_moment(n, 0.0f) {}
};

// One bias-corrected Adam update in place. Throws InvalidArgument on length mismatch.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, float lr);

struct LrSchedule {
  enum class Kind { warmup_step_decay, exponential_decay };

  Kind kind = Kind::warmup_step_decay;
  double base_lr = 1e-4;
  double peak_lr = 1e-2;
  double final_lr = 1e-4;
  int warmup_iters = 0;
  std::vector<int> milestones;
  double decay_factor = 1.0;
  // Length of the exponential ramp from base_lr to final_lr.
  int total_iters = 1;

  static LrSchedule constant(double lr);
  static LrSchedule warmup_step(double base, double peak, int warmup, std::vector<int> milestones,
                                double factor);
  static LrSchedule exponential(double start, double end, int total);

  // Throws InvalidArgument when rates are negative or the shape is malformed.
  void validate() const;
};

double lr_at(const LrSchedule& schedule, int iter);

} // namespace baangp
