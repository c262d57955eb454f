#pragma once

#include <cmath>

#include "animlab/tensor.hpp"

namespace animlab {

// PE[p, 2i]   = sin(p / 10000^(2i/dim))
// PE[p, 2i+1] = cos(p / 10000^(2i/dim))
inline Tensor sinusoidal_position_encoding(int64_t length, int64_t dim) {
  ANIMLAB_REQUIRE(length >= 1, "position encoding length must be >= 1, got ", length);
  ANIMLAB_REQUIRE(dim >= 2 && dim % 2 == 0, "position encoding dim must be even and >= 2, got ",
                  dim);
  Tensor pe({length, dim});
  for (int64_t p = 0; p < length; ++p)
    for (int64_t i = 0; i < dim / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      double a = static_cast<double>(p) * freq;
      pe.at({p, 2 * i}) = std::sin(a);
      pe.at({p, 2 * i + 1}) = std::cos(a);
    }
  return pe;
}

// Row `t` of the same table; used for diffusion timestep embeddings.
inline Tensor sinusoidal_timestep_embedding(int64_t t, int64_t dim) {
  ANIMLAB_REQUIRE(t >= 0, "timestep embedding needs t >= 0, got ", t);
  ANIMLAB_REQUIRE(dim >= 2 && dim % 2 == 0, "timestep embedding dim must be even and >= 2, got ",
                  dim);
  Tensor e({dim});
  for (int64_t i = 0; i < dim / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    double a = static_cast<double>(t) * freq;
    e[2 * i] = std::sin(a);
    e[2 * i + 1] = std::cos(a);
  }
  return e;
}

}  // namespace animlab
