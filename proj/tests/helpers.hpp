#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "animlab/ops.hpp"
#include "animlab/random.hpp"

namespace testutil {

using animlab::Rng;
using animlab::Shape;
using animlab::Tensor;
namespace ad = animlab::ad;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central finite differences against the recorded backward pass.
// `f` must be deterministic and return a scalar Var.
// Probes up to `max_probes` elements per input (strided, deterministic).
struct GradCheckResult {
  double worst_rel = 0.0;
  int64_t probes = 0;
};

inline GradCheckResult check_gradients(
    const std::function<ad::Var(std::vector<ad::Var>&)>& f, std::vector<Tensor> inputs,
    double h = 1e-5, int64_t max_probes = 64) {
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (auto& t : inputs) vars.push_back(ad::Var::leaf(t, true));
  ad::Var y = f(vars);
  ad::backward(y);
  std::vector<Tensor> analytic;
  for (auto& v : vars) analytic.push_back(v.has_grad() ? v.grad() : animlab::zeros_like(v.val()));

  GradCheckResult res;
  ad::NoGrad ng;
  for (size_t vi = 0; vi < inputs.size(); ++vi) {
    int64_t n = inputs[vi].numel();
    int64_t stride = std::max<int64_t>(1, n / max_probes);
    for (int64_t j = 0; j < n; j += stride) {
      double orig = inputs[vi][j];
      std::vector<ad::Var> probe;
      probe.reserve(inputs.size());
      auto eval = [&](double v) {
        inputs[vi][j] = v;
        probe.clear();
        for (auto& t : inputs) probe.push_back(ad::Var::leaf(t, false));
        return f(probe).val()[0];
      };
      double fp = eval(orig + h);
      double fm = eval(orig - h);
      inputs[vi][j] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double an = analytic[vi][j];
      double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      res.worst_rel = std::max(res.worst_rel, err);
      ++res.probes;
    }
  }
  return res;
}

// Plain-loop attention oracle: q_src [S,C], kv_src [S2,C], weights [C,C].
inline Tensor naive_attend(const Tensor& q_src, const Tensor& kv_src, const Tensor& wq,
                           const Tensor& wk, const Tensor& wv, const Tensor& wo) {
  int64_t s = q_src.dim(0), s2 = kv_src.dim(0), c = q_src.dim(1);
  auto proj = [c](const Tensor& in, const Tensor& w, int64_t row) {
    std::vector<double> out(static_cast<size_t>(c), 0.0);
    for (int64_t d = 0; d < c; ++d)
      for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(d)] += w.at({d, j}) * in.at({row, j});
    return out;
  };
  Tensor res({s, c});
  for (int64_t i = 0; i < s; ++i) {
    auto q = proj(q_src, wq, i);
    std::vector<double> scores(static_cast<size_t>(s2));
    double mx = -1e300;
    for (int64_t j = 0; j < s2; ++j) {
      auto k = proj(kv_src, wk, j);
      double dot = 0;
      for (int64_t d = 0; d < c; ++d) dot += q[static_cast<size_t>(d)] * k[static_cast<size_t>(d)];
      scores[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(c));
      mx = std::max(mx, scores[static_cast<size_t>(j)]);
    }
    double denom = 0;
    for (auto& v : scores) {
      v = std::exp(v - mx);
      denom += v;
    }
    std::vector<double> mixed(static_cast<size_t>(c), 0.0);
    for (int64_t j = 0; j < s2; ++j) {
      auto v = proj(kv_src, wv, j);
      for (int64_t d = 0; d < c; ++d)
        mixed[static_cast<size_t>(d)] += scores[static_cast<size_t>(j)] / denom * v[static_cast<size_t>(d)];
    }
    for (int64_t ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (int64_t d = 0; d < c; ++d) acc += wo.at({ch, d}) * mixed[static_cast<size_t>(d)];
      res.at({i, ch}) = acc;
    }
  }
  return res;
}

// Direct nested-loop convolution, the oracle for the GEMM path.
inline Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor* bias,
                               int64_t stride, int64_t pad) {
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int64_t oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t oh = (h + 2 * pad - kh) / stride + 1;
  int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({b, oc, oh, ow});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t o = 0; o < oc; ++o)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy * stride - pad + ky;
                int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at({i, ch, iy, ix}) * w.at({o, ch, ky, kx});
              }
          out.at({i, o, oy, ox}) = acc;
        }
  return out;
}

}  // namespace testutil
