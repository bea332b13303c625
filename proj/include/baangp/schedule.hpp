#pragma once

// Coarse-to-fine reweighting of per-level hash features.

#include <span>
#include <string>

namespace baangp {

enum class C2FMode { off, vanilla, substitution };

C2FMode parse_c2f_mode(const std::string& name);
std::string to_string(C2FMode mode);

struct C2FSchedule {
  double start = 0.1; // fraction of training progress where annealing begins
  double end = 0.5;   // fraction where every level is fully enabled
  int levels = 16;

  void validate() const;
};

// Level-scaled annealing position in [0, levels].
double c2f_alpha(const C2FSchedule& schedule, double progress);

// Cosine window for level k: 0 below k, raised cosine on [k, k+1), 1 above.
double window_weight(int level, double alpha);

// Index of the highest level with a nonzero window weight (0 if none).
int substitution_level(int levels, double alpha);

// Feature blocks are `levels` groups of `features` values. Output block k is
// w_k * d_k + (1 - w_k) * d_s, where d_s is the block of substitution_level().
void reweight_features(std::span<const float> in, std::span<float> out, int levels, int features,
                       double alpha);
// Adjoint of reweight_features: accumulates nothing, overwrites `grad_in`.
void reweight_features_backward(std::span<const float> grad_out, std::span<float> grad_in, int levels,
                                int features, double alpha);

// Window-only masking: block k scaled by w_k (fine levels become zero).
void mask_features(std::span<const float> in, std::span<float> out, int levels, int features,
                   double alpha);
void mask_features_backward(std::span<const float> grad_out, std::span<float> grad_in, int levels,
                            int features, double alpha);

// Dispatches on mode; `off` copies through.
void apply_c2f(C2FMode mode, std::span<const float> in, std::span<float> out, int levels, int features,
               double alpha);
void apply_c2f_backward(C2FMode mode, std::span<const float> grad_out, std::span<float> grad_in, int levels,
                        int features, double alpha);

} // namespace baangp
