#pragma once

#include <cmath>
#include <vector>

#include "animlab/schedule.hpp"

namespace animlab {

enum class SamplerKind { DDPM, DDIM };

inline const char* sampler_name(SamplerKind k) { return k == SamplerKind::DDPM ? "ddpm" : "ddim"; }

// One deterministic DDIM (eta = 0) update between two cumulative products.
// Works for both adjacent steps and strided subsequences.
inline Tensor ddim_step_between(const Tensor& z, const Tensor& eps, double abar_from,
                                double abar_to) {
  check_same_shape(z, eps, "ddim_step_between");
  ANIMLAB_REQUIRE(abar_from > 0.0 && abar_from <= 1.0 && abar_to > 0.0 && abar_to <= 1.0,
                  "cumulative products must lie in (0,1]");
  double sf = std::sqrt(abar_from), sfc = std::sqrt(1.0 - abar_from);
  double st = std::sqrt(abar_to), stc = std::sqrt(1.0 - abar_to);
  Tensor out(z.shape());
  for (int64_t i = 0; i < z.numel(); ++i) {
    double x0 = (z[i] - sfc * eps[i]) / sf;
    out[i] = st * x0 + stc * eps[i];
  }
  return out;
}

// One reverse step z_t -> z_{t-1}. DDPM needs `step_noise` whenever t > 0;
// DDIM (eta = 0) is deterministic and ignores it.
inline Tensor reverse_step(const Tensor& z, const Tensor& eps, int64_t t,
                           const NoiseSchedule& sched, SamplerKind kind,
                           const Tensor* step_noise = nullptr) {
  check_same_shape(z, eps, "reverse_step");
  sched.check_t(t);
  if (kind == SamplerKind::DDIM)
    return ddim_step_between(z, eps, sched.alpha_bar_at(t), sched.alpha_bar_at(t - 1));

  double beta = sched.betas[static_cast<size_t>(t)];
  double alpha = sched.alphas[static_cast<size_t>(t)];
  double abar = sched.alpha_bar_at(t);
  double abar_prev = sched.alpha_bar_at(t - 1);
  double mean_scale = 1.0 / std::sqrt(alpha);
  double eps_scale = beta / std::sqrt(1.0 - abar);
  Tensor out(z.shape());
  for (int64_t i = 0; i < z.numel(); ++i) out[i] = mean_scale * (z[i] - eps_scale * eps[i]);
  if (t > 0) {
    ANIMLAB_REQUIRE(step_noise != nullptr, "ddpm reverse step at t=", t, " needs step noise");
    check_same_shape(z, *step_noise, "reverse_step noise");
    double sigma = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
    for (int64_t i = 0; i < z.numel(); ++i) out[i] += sigma * (*step_noise)[i];
  }
  return out;
}

// Evenly strided descending subsequence of [0, T) with `steps` entries,
// always ending at a final hop onto clean data.
inline std::vector<int64_t> ddim_timesteps(int64_t T, int64_t steps) {
  ANIMLAB_REQUIRE(steps >= 1 && steps <= T, "sample_steps ", steps, " must lie in [1, ", T, "]");
  int64_t stride = T / steps;
  std::vector<int64_t> ts(static_cast<size_t>(steps));
  for (int64_t i = 0; i < steps; ++i) ts[static_cast<size_t>(i)] = T - 1 - i * stride;
  return ts;
}

}  // namespace animlab
