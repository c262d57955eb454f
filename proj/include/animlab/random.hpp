#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "animlab/common.hpp"
#include "animlab/tensor.hpp"

namespace animlab {

// Deterministic RNG with explicit Box-Muller so sampled values are identical
// across standard libraries. Every consumer owns a stream derived from a base
// seed plus a label, so adding a new consumer never shifts existing draws.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    ANIMLAB_REQUIRE(n > 0, "uniform_int needs a positive bound, got ", n);
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Tensor normal_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal();
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable stream id for (seed, label) and (seed, label, index).
inline uint64_t derive_seed(uint64_t base, const std::string& label) {
  uint64_t h = fnv1a64(label);
  h = fnv1a64(&base, sizeof(base), h);
  return h == 0 ? 0x9e3779b97f4a7c15ull : h;
}

inline uint64_t derive_seed(uint64_t base, const std::string& label, uint64_t index) {
  uint64_t h = derive_seed(base, label);
  h = fnv1a64(&index, sizeof(index), h);
  return h == 0 ? 0x9e3779b97f4a7c15ull : h;
}

inline Rng derive_rng(uint64_t base, const std::string& label) { return Rng(derive_seed(base, label)); }
inline Rng derive_rng(uint64_t base, const std::string& label, uint64_t index) {
  return Rng(derive_seed(base, label, index));
}

}  // namespace animlab
