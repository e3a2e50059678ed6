#include "optim.hpp"

#include <cmath>

#include "error.hpp"

namespace medssl {

LrSchedule LrSchedule::with_warmup_fraction(int total_steps, double peak, double fraction) {
  LrSchedule s;
  s.total_steps = total_steps;
  s.peak = peak;
  s.warmup_steps = static_cast<int>(std::lround(fraction * total_steps));
  if (s.warmup_steps >= total_steps) s.warmup_steps = std::max(0, total_steps - 1);
  return s;
}

double lr_schedule(int step, int total_steps, int warmup_steps, double peak) {
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw ConfigError("warm-up steps must lie in [0, total_steps)");
  if (step < 0 || step > total_steps) throw ConfigError("schedule step out of range");
  if (step < warmup_steps) return peak * static_cast<double>(step) / warmup_steps;
  const double progress = static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void adamw_step(ParamStore& params, const Gradients& grads, OptimizerState& state, double lr, const AdamWConfig& cfg) {
  auto& theta = params.values();
  const auto& g = grads.values();
  if (g.size() != theta.size()) throw ShapeError("gradient layout does not match parameters");
  if (state.m.size() != theta.size()) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
    state.steps = 0;
  }
  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  for (const auto& b : params.blocks()) {
    const bool decay = b.name.ends_with(".weight");
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
      state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      if (decay) theta[i] -= lr * cfg.weight_decay * theta[i];
      const double mhat = state.m[i] / bc1;
      const double vhat = state.v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace medssl
