#pragma once

#include <cmath>

#include "animlab/ops.hpp"
#include "animlab/pe.hpp"
#include "animlab/random.hpp"

namespace animlab {

// Single-head attention, head width == channel width, no biases, no pre-norm.
// Weights are [out, in] as consumed by ad::linear.
struct AttentionParams {
  ad::Var w_q, w_k, w_v, w_out;

  int64_t channels() const { return w_q.dim(1); }
  void check(const char* what) const {
    ANIMLAB_REQUIRE(w_q.defined() && w_k.defined() && w_v.defined() && w_out.defined(), what,
                    ": undefined attention weights");
    int64_t c = w_q.dim(1), d = w_q.dim(0);
    ANIMLAB_REQUIRE(w_k.shape() == Shape({d, c}) && w_v.shape() == Shape({d, c}) &&
                        w_out.shape() == Shape({c, d}),
                    what, ": inconsistent attention weight shapes");
  }
};

inline AttentionParams make_attention_params(Rng& rng, int64_t channels, bool zero_out_proj) {
  double s = 1.0 / std::sqrt(static_cast<double>(channels));
  AttentionParams p;
  p.w_q = ad::Var::leaf(rng.uniform_tensor({channels, channels}, -s, s), true);
  p.w_k = ad::Var::leaf(rng.uniform_tensor({channels, channels}, -s, s), true);
  p.w_v = ad::Var::leaf(rng.uniform_tensor({channels, channels}, -s, s), true);
  p.w_out = zero_out_proj ? ad::Var::leaf(Tensor({channels, channels}), true)
                          : ad::Var::leaf(rng.uniform_tensor({channels, channels}, -s, s), true);
  return p;
}

namespace detail {

// tokens: [B, S, Cin], w: [Cout, Cin] -> [B, S, Cout]
inline ad::Var project_tokens(const ad::Var& tokens, const ad::Var& w) {
  int64_t b = tokens.dim(0), s = tokens.dim(1), cin = tokens.dim(2);
  ad::Var flat = ad::reshape(tokens, {b * s, cin});
  ad::Var out = ad::linear(flat, w);
  return ad::reshape(out, {b, s, w.dim(0)});
}

// q_src: [B, S, C] queries; kv_src: [B, Skv, C] keys/values.
inline ad::Var attend(const ad::Var& q_src, const ad::Var& kv_src, const AttentionParams& p) {
  ad::Var q = project_tokens(q_src, p.w_q);
  ad::Var k = project_tokens(kv_src, p.w_k);
  ad::Var v = project_tokens(kv_src, p.w_v);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.w_q.dim(0)));
  ad::Var scores = ad::scale(ad::bmm_nt(q, k), inv_sqrt_d);  // [B, S, Skv]
  ad::Var attn = ad::softmax_last(scores);
  ad::Var mixed = ad::bmm_nn(attn, v);  // [B, S, d]
  return project_tokens(mixed, p.w_out);
}

}  // namespace detail

// Residual attention over the frame axis. f: [N, C, K, H, W]; every spatial
// location attends across its own K frames. The sinusoidal PE is added to the
// tokens before the q/k/v projections and only inside this op.
inline ad::Var temporal_attention(const ad::Var& f, const AttentionParams& p) {
  p.check("temporal_attention");
  ANIMLAB_REQUIRE(f.shape().size() == 5, "temporal_attention expects [N,C,K,H,W], got ",
                  shape_str(f.shape()));
  int64_t n = f.dim(0), c = f.dim(1), k = f.dim(2), h = f.dim(3), w = f.dim(4);
  ANIMLAB_REQUIRE(c == p.channels(), "temporal_attention channel mismatch: feature ", c,
                  " vs weights ", p.channels());
  ad::Var tokens = ad::reshape(ad::permute(f, {0, 3, 4, 2, 1}), {n * h * w, k, c});
  ad::Var pe = ad::Var::leaf(sinusoidal_position_encoding(k, c), false);
  ad::Var u = ad::add_bcast0(tokens, pe);
  ad::Var mixed = detail::attend(u, u, p);
  ad::Var back = ad::permute(ad::reshape(mixed, {n, h, w, k, c}), {0, 4, 3, 1, 2});
  return ad::add(f, back);
}

// Residual spatial self-attention with optional appearance tokens mixed into
// keys and values. f: [B, C, H, W]; appearance: [B, Sa, C] or undefined.
inline ad::Var spatial_hybrid_attention(const ad::Var& f, const AttentionParams& p,
                                        const ad::Var& appearance = ad::Var()) {
  p.check("spatial_hybrid_attention");
  ANIMLAB_REQUIRE(f.shape().size() == 4, "spatial_hybrid_attention expects [B,C,H,W], got ",
                  shape_str(f.shape()));
  int64_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  ANIMLAB_REQUIRE(c == p.channels(), "spatial_hybrid_attention channel mismatch: feature ", c,
                  " vs weights ", p.channels());
  ad::Var tokens = ad::reshape(ad::permute(f, {0, 2, 3, 1}), {b, h * w, c});
  ad::Var kv = tokens;
  if (appearance.defined()) {
    ANIMLAB_REQUIRE(appearance.shape().size() == 3, "appearance tokens must be [B,S,C], got ",
                    shape_str(appearance.shape()));
    ANIMLAB_REQUIRE(appearance.dim(0) == b, "appearance batch ", appearance.dim(0),
                    " vs feature batch ", b);
    ANIMLAB_REQUIRE(appearance.dim(2) == c, "appearance channel width ", appearance.dim(2),
                    " vs feature channels ", c);
    kv = ad::concat(1, {tokens, appearance});
  }
  ad::Var mixed = detail::attend(tokens, kv, p);
  ad::Var back = ad::permute(ad::reshape(mixed, {b, h, w, c}), {0, 3, 1, 2});
  return ad::add(f, back);
}

}  // namespace animlab
