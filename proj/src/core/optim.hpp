#pragma once

#include <cstdint>
#include <vector>

#include "params.hpp"

namespace medssl {

/// Linear warm-up to `peak`, then cosine annealing to zero at `total`.
struct LrSchedule {
  int total_steps = 1;
  int warmup_steps = 0;
  double peak = 1e-3;

  /// Warm-up of `fraction` of the steps (10/300 by default).
  static LrSchedule with_warmup_fraction(int total_steps, double peak, double fraction = 10.0 / 300.0);
};

double lr_schedule(int step, int total_steps, int warmup_steps, double peak);
inline double lr_at(const LrSchedule& s, int step) { return lr_schedule(step, s.total_steps, s.warmup_steps, s.peak); }

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t steps = 0;
};

/// Decoupled weight decay applies to linear weight matrices only.
void adamw_step(ParamStore& params, const Gradients& grads, OptimizerState& state, double lr, const AdamWConfig& cfg);

}  // namespace medssl
