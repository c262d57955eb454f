#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "animlab/autodiff.hpp"

namespace animlab::ad {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  const double* pb = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (needs_grad(p)) accumulate(p, self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  const double* pb = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (needs_grad(self.parents[0])) accumulate(self.parents[0], self.grad);
    if (needs_grad(self.parents[1])) {
      Tensor neg = self.grad;
      for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
      accumulate(self.parents[1], neg);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  const double* pb = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (needs_grad(self.parents[0])) {
      Tensor g = self.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
      accumulate(self.parents[0], g);
    }
    if (needs_grad(self.parents[1])) {
      Tensor g = self.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
      accumulate(self.parents[1], g);
    }
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_op(std::move(out), {a}, [c](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g = self.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= c;
    accumulate(self.parents[0], g);
  });
}

inline Var silu(const Var& x) {
  Tensor out = x.val();
  for (int64_t i = 0; i < out.numel(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-out[i]));
    out[i] *= s;
  }
  return make_op(std::move(out), {x}, [](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    const Tensor& xv = self.parents[0]->value;
    Tensor g = self.grad;
    for (int64_t i = 0; i < g.numel(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-xv[i]));
      g[i] *= s * (1.0 + xv[i] * (1.0 - s));
    }
    accumulate(self.parents[0], g);
  });
}

// ---- shape ----

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.val().reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    accumulate(self.parents[0], self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

namespace detail {
inline std::vector<int64_t> row_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}

inline Tensor permute_values(const Tensor& x, const std::vector<int64_t>& perm) {
  const Shape& in = x.shape();
  size_t r = in.size();
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = in[static_cast<size_t>(perm[i])];
  Tensor out(out_shape);
  auto in_st = row_strides(in);
  auto out_st = row_strides(out_shape);
  // out[idx] = x[idx mapped through perm]
  std::vector<int64_t> src_stride_for_out(r);
  for (size_t i = 0; i < r; ++i) src_stride_for_out[i] = in_st[static_cast<size_t>(perm[i])];
  int64_t n = out.numel();
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o, src = 0;
    for (size_t i = 0; i < r; ++i) {
      int64_t q = rem / out_st[i];
      rem -= q * out_st[i];
      src += q * src_stride_for_out[i];
    }
    out[o] = x[src];
  }
  return out;
}
}  // namespace detail

inline Var permute(const Var& x, std::vector<int64_t> perm) {
  size_t r = x.val().shape().size();
  ANIMLAB_REQUIRE(perm.size() == r, "permute rank mismatch");
  std::vector<bool> hit(r, false);
  for (int64_t p : perm) {
    ANIMLAB_REQUIRE(p >= 0 && p < static_cast<int64_t>(r) && !hit[static_cast<size_t>(p)],
                    "bad permutation");
    hit[static_cast<size_t>(p)] = true;
  }
  Tensor out = detail::permute_values(x.val(), perm);
  return make_op(std::move(out), {x}, [perm, r](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    std::vector<int64_t> inv(r);
    for (size_t i = 0; i < r; ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
    accumulate(self.parents[0], detail::permute_values(self.grad, inv));
  });
}

inline Var concat(int64_t axis, const std::vector<Var>& parts) {
  ANIMLAB_REQUIRE(!parts.empty(), "concat of nothing");
  const Shape& s0 = parts[0].shape();
  size_t r = s0.size();
  ANIMLAB_REQUIRE(axis >= 0 && axis < static_cast<int64_t>(r), "concat axis out of range");
  Shape out_shape = s0;
  int64_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    ANIMLAB_REQUIRE(s.size() == r, "concat rank mismatch");
    for (size_t i = 0; i < r; ++i)
      ANIMLAB_REQUIRE(static_cast<int64_t>(i) == axis || s[i] == s0[i],
                      "concat shape mismatch at dim ", i, ": ", shape_str(s), " vs ", shape_str(s0));
    total += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;
  Tensor out(out_shape);

  int64_t outer = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  int64_t inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < r; ++i) inner *= s0[i];
  int64_t out_row = total * inner;

  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const Var& p : parts) {
    int64_t len = p.dim(axis) * inner;
    lens.push_back(p.dim(axis));
    const double* src = p.val().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * len, src + (o + 1) * len, out.data() + o * out_row + off);
    off += len;
  }
  return make_op(std::move(out), parts, [outer, inner, out_row, lens](Node& self) {
    int64_t off = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      int64_t len = lens[k] * inner;
      if (needs_grad(self.parents[k])) {
        Tensor g(self.parents[k]->value.shape());
        for (int64_t o = 0; o < outer; ++o)
          std::copy(self.grad.data() + o * out_row + off, self.grad.data() + o * out_row + off + len,
                    g.data() + o * len);
        accumulate(self.parents[k], g);
      }
      off += len;
    }
  });
}

inline Var slice(const Var& x, int64_t axis, int64_t start, int64_t len) {
  const Shape& s = x.shape();
  ANIMLAB_REQUIRE(axis >= 0 && axis < static_cast<int64_t>(s.size()), "slice axis out of range");
  ANIMLAB_REQUIRE(start >= 0 && len > 0 && start + len <= s[static_cast<size_t>(axis)],
                  "slice [", start, ",", start + len, ") out of range for dim ",
                  s[static_cast<size_t>(axis)]);
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  int64_t inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  int64_t in_row = s[static_cast<size_t>(axis)] * inner;
  int64_t out_len = len * inner;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::copy(x.val().data() + o * in_row + start * inner,
              x.val().data() + o * in_row + start * inner + out_len, out.data() + o * out_len);
  return make_op(std::move(out), {x}, [outer, inner, in_row, start, out_len](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g(self.parents[0]->value.shape());
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = self.grad.data() + o * out_len;
      double* dst = g.data() + o * in_row + start * inner;
      for (int64_t i = 0; i < out_len; ++i) dst[i] += src[i];
    }
    accumulate(self.parents[0], g);
  });
}

// x: [B, ...] -> [B*k, ...], sample b repeated k consecutive times.
inline Var repeat_rows(const Var& x, int64_t k) {
  ANIMLAB_REQUIRE(k >= 1, "repeat_rows needs k >= 1");
  const Shape& s = x.shape();
  int64_t b = s[0];
  int64_t row = x.numel() / b;
  Shape out_shape = s;
  out_shape[0] = b * k;
  Tensor out(out_shape);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < k; ++j)
      std::copy(x.val().data() + i * row, x.val().data() + (i + 1) * row,
                out.data() + (i * k + j) * row);
  return make_op(std::move(out), {x}, [b, k, row](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g(self.parents[0]->value.shape());
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < k; ++j) {
        const double* src = self.grad.data() + (i * k + j) * row;
        double* dst = g.data() + i * row;
        for (int64_t t = 0; t < row; ++t) dst[t] += src[t];
      }
    accumulate(self.parents[0], g);
  });
}

// x: [B, rest...], p: [rest...]; out[b] = x[b] + p.
inline Var add_bcast0(const Var& x, const Var& p) {
  const Shape& xs = x.shape();
  const Shape& ps = p.shape();
  ANIMLAB_REQUIRE(xs.size() == ps.size() + 1, "add_bcast0 rank mismatch");
  for (size_t i = 0; i < ps.size(); ++i)
    ANIMLAB_REQUIRE(xs[i + 1] == ps[i], "add_bcast0 shape mismatch ", shape_str(xs), " vs ",
                    shape_str(ps));
  int64_t b = xs[0];
  int64_t row = p.numel();
  Tensor out = x.val();
  for (int64_t i = 0; i < b; ++i) {
    double* dst = out.data() + i * row;
    const double* src = p.val().data();
    for (int64_t t = 0; t < row; ++t) dst[t] += src[t];
  }
  return make_op(std::move(out), {x, p}, [b, row](Node& self) {
    if (needs_grad(self.parents[0])) accumulate(self.parents[0], self.grad);
    if (needs_grad(self.parents[1])) {
      Tensor g(self.parents[1]->value.shape());
      for (int64_t i = 0; i < b; ++i) {
        const double* src = self.grad.data() + i * row;
        for (int64_t t = 0; t < row; ++t) g[t] += src[t];
      }
      accumulate(self.parents[1], g);
    }
  });
}

// x: [B, C, H, W], v: [B, C]; adds v[b, c] to every spatial location.
inline Var add_channel_rows(const Var& x, const Var& v) {
  const Shape& xs = x.shape();
  ANIMLAB_REQUIRE(xs.size() == 4, "add_channel_rows expects [B,C,H,W], got ", shape_str(xs));
  ANIMLAB_REQUIRE(v.shape() == Shape({xs[0], xs[1]}), "add_channel_rows vector shape ",
                  shape_str(v.shape()), " vs ", shape_str(xs));
  int64_t b = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor out = x.val();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double a = v.val()[i * c + j];
      double* dst = out.data() + (i * c + j) * hw;
      for (int64_t t = 0; t < hw; ++t) dst[t] += a;
    }
  return make_op(std::move(out), {x, v}, [b, c, hw](Node& self) {
    if (needs_grad(self.parents[0])) accumulate(self.parents[0], self.grad);
    if (needs_grad(self.parents[1])) {
      Tensor g(self.parents[1]->value.shape());
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < c; ++j) {
          const double* src = self.grad.data() + (i * c + j) * hw;
          double acc = 0;
          for (int64_t t = 0; t < hw; ++t) acc += src[t];
          g[i * c + j] += acc;
        }
      accumulate(self.parents[1], g);
    }
  });
}

// ---- matmul family ----

// x: [M, K], w: [N, K] -> x * w^T: [M, N].
inline Var linear(const Var& x, const Var& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  ANIMLAB_REQUIRE(xs.size() == 2 && ws.size() == 2, "linear expects 2-d operands");
  ANIMLAB_REQUIRE(xs[1] == ws[1], "linear inner dim mismatch ", shape_str(xs), " vs ",
                  shape_str(ws));
  int64_t m = xs[0], k = xs[1], n = ws[0];
  Tensor out({m, n});
  EMap(out.data(), m, n).noalias() = ECMap(x.val().data(), m, k) * ECMap(w.val().data(), n, k).transpose();
  return make_op(std::move(out), {x, w}, [m, k, n](Node& self) {
    ECMap gy(self.grad.data(), m, n);
    if (needs_grad(self.parents[0])) {
      Tensor gx({m, k});
      EMap(gx.data(), m, k).noalias() = gy * ECMap(self.parents[1]->value.data(), n, k);
      accumulate(self.parents[0], gx);
    }
    if (needs_grad(self.parents[1])) {
      Tensor gw({n, k});
      EMap(gw.data(), n, k).noalias() =
          gy.transpose() * ECMap(self.parents[0]->value.data(), m, k);
      accumulate(self.parents[1], gw);
    }
  });
}

// a: [B, M, K], b: [B, K, N] -> [B, M, N].
inline Var bmm_nn(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  ANIMLAB_REQUIRE(as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1],
                  "bmm_nn shape mismatch ", shape_str(as), " vs ", shape_str(bs));
  int64_t bb = as[0], m = as[1], k = as[2], n = bs[2];
  Tensor out({bb, m, n});
  for (int64_t i = 0; i < bb; ++i)
    EMap(out.data() + i * m * n, m, n).noalias() =
        ECMap(a.val().data() + i * m * k, m, k) * ECMap(b.val().data() + i * k * n, k, n);
  return make_op(std::move(out), {a, b}, [bb, m, k, n](Node& self) {
    for (int64_t i = 0; i < bb; ++i) {
      ECMap gy(self.grad.data() + i * m * n, m, n);
      if (needs_grad(self.parents[0])) {
        self.parents[0]->ensure_grad();
        EMap(self.parents[0]->grad.data() + i * m * k, m, k).noalias() +=
            gy * ECMap(self.parents[1]->value.data() + i * k * n, k, n).transpose();
      }
      if (needs_grad(self.parents[1])) {
        self.parents[1]->ensure_grad();
        EMap(self.parents[1]->grad.data() + i * k * n, k, n).noalias() +=
            ECMap(self.parents[0]->value.data() + i * m * k, m, k).transpose() * gy;
      }
    }
  });
}

// a: [B, M, K], b: [B, N, K] -> a * b^T per batch: [B, M, N].
inline Var bmm_nt(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  ANIMLAB_REQUIRE(as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[2],
                  "bmm_nt shape mismatch ", shape_str(as), " vs ", shape_str(bs));
  int64_t bb = as[0], m = as[1], k = as[2], n = bs[1];
  Tensor out({bb, m, n});
  for (int64_t i = 0; i < bb; ++i)
    EMap(out.data() + i * m * n, m, n).noalias() =
        ECMap(a.val().data() + i * m * k, m, k) *
        ECMap(b.val().data() + i * n * k, n, k).transpose();
  return make_op(std::move(out), {a, b}, [bb, m, k, n](Node& self) {
    for (int64_t i = 0; i < bb; ++i) {
      ECMap gy(self.grad.data() + i * m * n, m, n);
      if (needs_grad(self.parents[0])) {
        self.parents[0]->ensure_grad();
        EMap(self.parents[0]->grad.data() + i * m * k, m, k).noalias() +=
            gy * ECMap(self.parents[1]->value.data() + i * n * k, n, k);
      }
      if (needs_grad(self.parents[1])) {
        self.parents[1]->ensure_grad();
        EMap(self.parents[1]->grad.data() + i * n * k, n, k).noalias() +=
            gy.transpose() * ECMap(self.parents[0]->value.data() + i * m * k, m, k);
      }
    }
  });
}

// ---- normalization and softmax ----

inline Var softmax_last(const Var& x) {
  const Shape& s = x.shape();
  int64_t cols = s.back();
  int64_t rows = x.numel() / cols;
  Tensor out = x.val();
  for (int64_t r = 0; r < rows; ++r) {
    double* p = out.data() + r * cols;
    double mx = p[0];
    for (int64_t i = 1; i < cols; ++i) mx = std::max(mx, p[i]);
    double sum = 0;
    for (int64_t i = 0; i < cols; ++i) {
      p[i] = std::exp(p[i] - mx);
      sum += p[i];
    }
    for (int64_t i = 0; i < cols; ++i) p[i] /= sum;
  }
  return make_op(std::move(out), {x}, [rows, cols](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g(self.parents[0]->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0;
      for (int64_t i = 0; i < cols; ++i) dot += gy[i] * y[i];
      double* gp = g.data() + r * cols;
      for (int64_t i = 0; i < cols; ++i) gp[i] = y[i] * (gy[i] - dot);
    }
    accumulate(self.parents[0], g);
  });
}

// Normalize over the last axis, no affine part.
inline Var layer_norm_last(const Var& x, double eps = 1e-5) {
  const Shape& s = x.shape();
  int64_t cols = s.back();
  int64_t rows = x.numel() / cols;
  Tensor out(s);
  Tensor inv_sigma({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = x.val().data() + r * cols;
    double mu = 0;
    for (int64_t i = 0; i < cols; ++i) mu += p[i];
    mu /= static_cast<double>(cols);
    double var = 0;
    for (int64_t i = 0; i < cols; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    double* q = out.data() + r * cols;
    for (int64_t i = 0; i < cols; ++i) q[i] = (p[i] - mu) * is;
  }
  return make_op(std::move(out), {x}, [rows, cols, inv_sigma](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g(self.parents[0]->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double* xe = self.value.data() + r * cols;  // normalized values
      const double* gy = self.grad.data() + r * cols;
      double mg = 0, mgx = 0;
      for (int64_t i = 0; i < cols; ++i) {
        mg += gy[i];
        mgx += gy[i] * xe[i];
      }
      mg /= static_cast<double>(cols);
      mgx /= static_cast<double>(cols);
      double* gp = g.data() + r * cols;
      for (int64_t i = 0; i < cols; ++i) gp[i] = (gy[i] - mg - xe[i] * mgx) * inv_sigma[r];
    }
    accumulate(self.parents[0], g);
  });
}

// x: [B, C, H, W] grouped over channels; gamma, beta: [C].
inline Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta,
                      double eps = 1e-5) {
  const Shape& s = x.shape();
  ANIMLAB_REQUIRE(s.size() == 4, "group_norm expects [B,C,H,W], got ", shape_str(s));
  int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  ANIMLAB_REQUIRE(groups >= 1 && c % groups == 0, "group_norm groups ", groups,
                  " must divide channels ", c);
  ANIMLAB_REQUIRE(gamma.shape() == Shape({c}) && beta.shape() == Shape({c}),
                  "group_norm affine shape mismatch");
  int64_t cg = c / groups;
  int64_t m = cg * hw;
  Tensor xhat(s);
  Tensor inv_sigma({b, groups});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t g = 0; g < groups; ++g) {
      const double* p = x.val().data() + (i * c + g * cg) * hw;
      double mu = 0;
      for (int64_t t = 0; t < m; ++t) mu += p[t];
      mu /= static_cast<double>(m);
      double var = 0;
      for (int64_t t = 0; t < m; ++t) var += (p[t] - mu) * (p[t] - mu);
      var /= static_cast<double>(m);
      double is = 1.0 / std::sqrt(var + eps);
      inv_sigma.at({i, g}) = is;
      double* q = xhat.data() + (i * c + g * cg) * hw;
      for (int64_t t = 0; t < m; ++t) q[t] = (p[t] - mu) * is;
    }
  Tensor out(s);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double ga = gamma.val()[j], be = beta.val()[j];
      const double* p = xhat.data() + (i * c + j) * hw;
      double* q = out.data() + (i * c + j) * hw;
      for (int64_t t = 0; t < hw; ++t) q[t] = ga * p[t] + be;
    }
  return make_op(std::move(out), {x, gamma, beta},
                 [b, c, cg, hw, m, groups, xhat, inv_sigma](Node& self) {
    const Tensor& gy = self.grad;
    if (needs_grad(self.parents[1])) {
      Tensor gg({c});
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < c; ++j) {
          const double* xh = xhat.data() + (i * c + j) * hw;
          const double* gp = gy.data() + (i * c + j) * hw;
          double acc = 0;
          for (int64_t t = 0; t < hw; ++t) acc += gp[t] * xh[t];
          gg[j] += acc;
        }
      accumulate(self.parents[1], gg);
    }
    if (needs_grad(self.parents[2])) {
      Tensor gb({c});
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < c; ++j) {
          const double* gp = gy.data() + (i * c + j) * hw;
          double acc = 0;
          for (int64_t t = 0; t < hw; ++t) acc += gp[t];
          gb[j] += acc;
        }
      accumulate(self.parents[2], gb);
    }
    if (needs_grad(self.parents[0])) {
      const Tensor& gamma_v = self.parents[1]->value;
      Tensor gx(self.parents[0]->value.shape());
      for (int64_t i = 0; i < b; ++i)
        for (int64_t g = 0; g < groups; ++g) {
          // dxhat = gy * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_sigma
          double mg = 0, mgx = 0;
          for (int64_t jc = 0; jc < cg; ++jc) {
            int64_t j = g * cg + jc;
            const double* gp = gy.data() + (i * c + j) * hw;
            const double* xh = xhat.data() + (i * c + j) * hw;
            double ga = gamma_v[j];
            for (int64_t t = 0; t < hw; ++t) {
              double dxh = gp[t] * ga;
              mg += dxh;
              mgx += dxh * xh[t];
            }
          }
          mg /= static_cast<double>(m);
          mgx /= static_cast<double>(m);
          double is = inv_sigma.at({i, g});
          for (int64_t jc = 0; jc < cg; ++jc) {
            int64_t j = g * cg + jc;
            const double* gp = gy.data() + (i * c + j) * hw;
            const double* xh = xhat.data() + (i * c + j) * hw;
            double* q = gx.data() + (i * c + j) * hw;
            double ga = gamma_v[j];
            for (int64_t t = 0; t < hw; ++t) q[t] = (gp[t] * ga - mg - xh[t] * mgx) * is;
          }
        }
      accumulate(self.parents[0], gx);
    }
  });
}

// ---- conv and resampling ----

namespace detail {
// col: [OH*OW, C*kh*kw] for one batch item.
inline void im2col(const double* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t oh, int64_t ow, double* col) {
  for (int64_t p = 0; p < oh * ow; ++p) {
    int64_t oy = p / ow, ox = p % ow;
    double* row = col + p * c * kh * kw;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < kh; ++i) {
        int64_t iy = oy * stride - pad + i;
        for (int64_t j = 0; j < kw; ++j) {
          int64_t ix = ox * stride - pad + j;
          row[(ch * kh + i) * kw + j] =
              (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(ch * h + iy) * w + ix] : 0.0;
        }
      }
  }
}

inline void col2im_acc(const double* col, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t oh, int64_t ow, double* x) {
  for (int64_t p = 0; p < oh * ow; ++p) {
    int64_t oy = p / ow, ox = p % ow;
    const double* row = col + p * c * kh * kw;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < kh; ++i) {
        int64_t iy = oy * stride - pad + i;
        if (iy < 0 || iy >= h) continue;
        for (int64_t j = 0; j < kw; ++j) {
          int64_t ix = ox * stride - pad + j;
          if (ix < 0 || ix >= w) continue;
          x[(ch * h + iy) * w + ix] += row[(ch * kh + i) * kw + j];
        }
      }
  }
}
}  // namespace detail

// x: [B, C, H, W], w: [OC, C, kh, kw], bias: [OC] (optional, pass undefined Var).
inline Var conv2d(const Var& x, const Var& w, const Var& bias, int64_t stride, int64_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  ANIMLAB_REQUIRE(xs.size() == 4, "conv2d input must be [B,C,H,W], got ", shape_str(xs));
  ANIMLAB_REQUIRE(ws.size() == 4, "conv2d weight must be [OC,C,kh,kw], got ", shape_str(ws));
  ANIMLAB_REQUIRE(xs[1] == ws[1], "conv2d channel mismatch: input ", xs[1], " vs weight ", ws[1]);
  ANIMLAB_REQUIRE(stride >= 1 && pad >= 0, "conv2d bad stride/pad");
  int64_t b = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  int64_t oc = ws[0], kh = ws[2], kw = ws[3];
  int64_t oh = (h + 2 * pad - kh) / stride + 1;
  int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  ANIMLAB_REQUIRE(oh >= 1 && ow >= 1, "conv2d output would be empty");
  if (bias.defined())
    ANIMLAB_REQUIRE(bias.shape() == Shape({oc}), "conv2d bias shape ", shape_str(bias.shape()),
                    " vs out channels ", oc);
  int64_t q = c * kh * kw, p = oh * ow;

  // W2: [Q, OC] copy of w for GEMM.
  Tensor w2({q, oc});
  for (int64_t o = 0; o < oc; ++o)
    for (int64_t t = 0; t < q; ++t) w2[t * oc + o] = w.val()[o * q + t];

  Tensor out({b, oc, oh, ow});
  Tensor col({p, q});
  Tensor gbuf({p, oc});
  for (int64_t i = 0; i < b; ++i) {
    detail::im2col(x.val().data() + i * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
                   col.data());
    EMap(gbuf.data(), p, oc).noalias() = ECMap(col.data(), p, q) * ECMap(w2.data(), q, oc);
    for (int64_t o = 0; o < oc; ++o) {
      double bv = bias.defined() ? bias.val()[o] : 0.0;
      double* dst = out.data() + (i * oc + o) * p;
      const double* src = gbuf.data() + o;
      for (int64_t t = 0; t < p; ++t) dst[t] = src[t * oc] + bv;
    }
  }

  std::vector<Var> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  bool has_bias = bias.defined();
  return make_op(std::move(out), std::move(inputs),
                 [b, c, h, wd, oc, kh, kw, stride, pad, oh, ow, q, p, w2, has_bias](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    bool need_x = needs_grad(self.parents[0]);
    bool need_w = needs_grad(self.parents[1]);
    bool need_b = has_bias && needs_grad(self.parents[2]);
    Tensor col({p, q});
    Tensor gy({p, oc});
    Tensor gw2;
    if (need_w) gw2 = Tensor({q, oc});
    Tensor gx;
    if (need_x) gx = Tensor(xv.shape());
    Tensor gb;
    if (need_b) gb = Tensor({oc});
    Tensor gcol({p, q});
    for (int64_t i = 0; i < b; ++i) {
      for (int64_t o = 0; o < oc; ++o) {
        const double* src = self.grad.data() + (i * oc + o) * p;
        double* dst = gy.data() + o;
        for (int64_t t = 0; t < p; ++t) dst[t * oc] = src[t];
      }
      if (need_b)
        for (int64_t o = 0; o < oc; ++o) {
          const double* src = self.grad.data() + (i * oc + o) * p;
          double acc = 0;
          for (int64_t t = 0; t < p; ++t) acc += src[t];
          gb[o] += acc;
        }
      if (need_w || need_x)
        detail::im2col(xv.data() + i * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
                       col.data());
      if (need_w)
        EMap(gw2.data(), q, oc).noalias() +=
            ECMap(col.data(), p, q).transpose() * ECMap(gy.data(), p, oc);
      if (need_x) {
        EMap(gcol.data(), p, q).noalias() =
            ECMap(gy.data(), p, oc) * ECMap(w2.data(), q, oc).transpose();
        detail::col2im_acc(gcol.data(), c, h, wd, kh, kw, stride, pad, oh, ow,
                           gx.data() + i * c * h * wd);
      }
    }
    if (need_x) accumulate(self.parents[0], gx);
    if (need_w) {
      Tensor gw(wv.shape());
      for (int64_t o = 0; o < oc; ++o)
        for (int64_t t = 0; t < q; ++t) gw[o * q + t] = gw2[t * oc + o];
      accumulate(self.parents[1], gw);
    }
    if (need_b) accumulate(self.parents[2], gb);
  });
}

// x: [B, C, H, W] -> [B, C, 2H, 2W], nearest neighbor.
inline Var upsample_nearest2(const Var& x) {
  const Shape& s = x.shape();
  ANIMLAB_REQUIRE(s.size() == 4, "upsample_nearest2 expects [B,C,H,W]");
  int64_t bc = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], h * 2, w * 2});
  for (int64_t i = 0; i < bc; ++i) {
    const double* src = x.val().data() + i * h * w;
    double* dst = out.data() + i * h * w * 4;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        double v = src[y * w + xx];
        dst[(2 * y) * 2 * w + 2 * xx] = v;
        dst[(2 * y) * 2 * w + 2 * xx + 1] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xx] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xx + 1] = v;
      }
  }
  return make_op(std::move(out), {x}, [bc, h, w](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g(self.parents[0]->value.shape());
    for (int64_t i = 0; i < bc; ++i) {
      const double* src = self.grad.data() + i * h * w * 4;
      double* dst = g.data() + i * h * w;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx)
          dst[y * w + xx] = src[(2 * y) * 2 * w + 2 * xx] + src[(2 * y) * 2 * w + 2 * xx + 1] +
                            src[(2 * y + 1) * 2 * w + 2 * xx] +
                            src[(2 * y + 1) * 2 * w + 2 * xx + 1];
    }
    accumulate(self.parents[0], g);
  });
}

// ---- reductions ----

inline Var sum_all(const Var& x) {
  double acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.val()[i];
  return make_op(Tensor::scalar(acc), {x}, [](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g(self.parents[0]->value.shape(), self.grad[0]);
    accumulate(self.parents[0], g);
  });
}

inline Var mean_all(const Var& x) {
  double n = static_cast<double>(x.numel());
  double acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.val()[i];
  return make_op(Tensor::scalar(acc / n), {x}, [n](Node& self) {
    if (!needs_grad(self.parents[0])) return;
    Tensor g(self.parents[0]->value.shape(), self.grad[0] / n);
    accumulate(self.parents[0], g);
  });
}

// mean((a - b)^2) over every element.
inline Var mse(const Var& a, const Var& b) {
  check_same_shape(a.val(), b.val(), "mse");
  double n = static_cast<double>(a.numel());
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a.val()[i] - b.val()[i];
    acc += d * d;
  }
  return make_op(Tensor::scalar(acc / n), {a, b}, [n](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    double s = 2.0 * self.grad[0] / n;
    if (needs_grad(self.parents[0])) {
      Tensor g(av.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = s * (av[i] - bv[i]);
      accumulate(self.parents[0], g);
    }
    if (needs_grad(self.parents[1])) {
      Tensor g(bv.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = s * (bv[i] - av[i]);
      accumulate(self.parents[1], g);
    }
  });
}

}  // namespace animlab::ad
