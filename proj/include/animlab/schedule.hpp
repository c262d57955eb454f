#pragma once

#include <cmath>
#include <vector>

#include "animlab/random.hpp"
#include "animlab/tensor.hpp"

namespace animlab {

// Linear beta schedule with cached cumulative products. alpha_bar_at(-1)
// is defined as 1 so "the step before the first" means no noise.
struct NoiseSchedule {
  int64_t T = 0;
  std::vector<double> betas, alphas, alpha_bars;

  double alpha_bar_at(int64_t t) const {
    ANIMLAB_REQUIRE(t >= -1 && t < T, "timestep ", t, " outside [-1, ", T, ")");
    return t < 0 ? 1.0 : alpha_bars[static_cast<size_t>(t)];
  }

  void check_t(int64_t t) const { ANIMLAB_REQUIRE(t >= 0 && t < T, "timestep ", t, " outside [0, ", T, ")"); }
};

inline NoiseSchedule make_noise_schedule(int64_t T, double beta_start, double beta_end) {
  ANIMLAB_REQUIRE(T >= 1, "schedule needs T >= 1, got ", T);
  ANIMLAB_REQUIRE(beta_start > 0.0 && beta_start < 1.0, "beta_start must lie in (0,1), got ",
                  beta_start);
  ANIMLAB_REQUIRE(beta_end > 0.0 && beta_end < 1.0, "beta_end must lie in (0,1), got ", beta_end);
  ANIMLAB_REQUIRE(beta_start <= beta_end, "beta_start ", beta_start, " must not exceed beta_end ",
                  beta_end);
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alphas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int64_t t = 0; t < T; ++t) {
    double b = T == 1 ? beta_start
                      : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                         static_cast<double>(T - 1);
    s.betas[static_cast<size_t>(t)] = b;
    s.alphas[static_cast<size_t>(t)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bars[static_cast<size_t>(t)] = prod;
  }
  return s;
}

// q-sample: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. t = -1 returns x0.
inline Tensor forward_noise(const Tensor& x0, int64_t t, const Tensor& eps,
                            const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "forward_noise");
  ANIMLAB_REQUIRE(t >= -1 && t < sched.T, "timestep ", t, " outside [-1, ", sched.T, ")");
  double ab = sched.alpha_bar_at(t);
  double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

}  // namespace animlab
