#pragma once

#include <algorithm>
#include <vector>

#include "animlab/random.hpp"
#include "animlab/tensor.hpp"

namespace animlab {

// Overlapping-window decomposition of an N-frame sequence. Consecutive
// window starts differ by K - s, so neighbouring windows share s frames;
// slots running past the end wrap to the clip head ("pad with the first
// few frames").
struct SegmentPlan {
  int64_t total = 0;    // N
  int64_t window = 0;   // K
  int64_t stride = 0;   // s
  int64_t extra = 0;    // windows beyond the first
  int64_t pad_len = 0;  // wrapped slots in the last window
  std::vector<int64_t> starts;

  int64_t windows() const { return static_cast<int64_t>(starts.size()); }

  // source frame of a window slot
  int64_t frame_of(int64_t w, int64_t slot) const {
    ANIMLAB_REQUIRE(w >= 0 && w < windows(), "window ", w, " outside [0, ", windows(), ")");
    ANIMLAB_REQUIRE(slot >= 0 && slot < window, "slot ", slot, " outside [0, ", window, ")");
    return (starts[static_cast<size_t>(w)] + slot) % total;
  }

  // true when the slot runs past the end and wraps
  bool is_pad(int64_t w, int64_t slot) const {
    return starts[static_cast<size_t>(w)] + slot >= total;
  }
};

inline SegmentPlan plan_segments(int64_t N, int64_t K, int64_t s) {
  ANIMLAB_REQUIRE(K >= 1, "window length must be positive, got ", K);
  ANIMLAB_REQUIRE(N >= K, "sequence of ", N, " frames is shorter than the window ", K);
  ANIMLAB_REQUIRE(s > 0 && s < K, "overlap stride must satisfy 0 < s < K, got s=", s, " K=", K);
  SegmentPlan p;
  p.total = N;
  p.window = K;
  p.stride = s;
  int64_t hop = K - s;
  p.extra = (N - K + hop - 1) / hop;  // ceil((N-K)/(K-s))
  for (int64_t w = 0; w <= p.extra; ++w) p.starts.push_back(w * hop);
  p.pad_len = std::max<int64_t>(0, p.starts.back() + K - N);
  return p;
}

enum class NoiseMode { Shared, Partitioned };

inline const char* noise_mode_name(NoiseMode m) {
  return m == NoiseMode::Shared ? "shared" : "partitioned";
}

// Pull one window out of an N-frame tensor [1, C, N, H, W] -> [1, C, K, H, W].
inline Tensor slice_frames(const Tensor& z, const SegmentPlan& plan, int64_t w) {
  const Shape& s = z.shape();
  ANIMLAB_REQUIRE(s.size() == 5 && s[0] == 1 && s[2] == plan.total,
                  "expected [1,C,", plan.total, ",H,W], got ", shape_str(s));
  int64_t c = s[1], h = s[3], wd = s[4], hw = h * wd;
  Tensor out({1, c, plan.window, h, wd});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t j = 0; j < plan.window; ++j) {
      int64_t f = plan.frame_of(w, j);
      const double* src = z.data() + (ch * plan.total + f) * hw;
      std::copy(src, src + hw, out.data() + (ch * plan.window + j) * hw);
    }
  return out;
}

// Starting latent for every window. Shared mode draws one K-frame noise
// tensor and hands it to all windows; partitioned mode draws one N-frame
// tensor and lets each window take its slice (wrapped slots reuse the head
// frames' noise).
inline std::vector<Tensor> assign_initial_noise(const SegmentPlan& plan, NoiseMode mode,
                                                int64_t c, int64_t h, int64_t w, uint64_t seed) {
  ANIMLAB_REQUIRE(c >= 1 && h >= 1 && w >= 1, "bad latent geometry ", c, "x", h, "x", w);
  Rng rng = derive_rng(seed, "init_noise");
  std::vector<Tensor> out;
  if (mode == NoiseMode::Shared) {
    Tensor shared = rng.normal_tensor({1, c, plan.window, h, w});
    out.assign(static_cast<size_t>(plan.windows()), shared);
  } else {
    Tensor global = rng.normal_tensor({1, c, plan.total, h, w});
    for (int64_t g = 0; g < plan.windows(); ++g) out.push_back(slice_frames(global, plan, g));
  }
  return out;
}

// Average the windows' K-frame predictions into one N-frame tensor. Frames
// covered by several windows take the arithmetic mean, summed in ascending
// window order. Wrapped slots flow back into their source frames unless
// drop_pad is set.
inline Tensor fuse_predictions(const std::vector<Tensor>& preds, const SegmentPlan& plan,
                               bool drop_pad = false) {
  ANIMLAB_REQUIRE(static_cast<int64_t>(preds.size()) == plan.windows(), "got ", preds.size(),
                  " predictions for ", plan.windows(), " windows");
  const Shape& s0 = preds.front().shape();
  ANIMLAB_REQUIRE(s0.size() == 5 && s0[0] == 1 && s0[2] == plan.window,
                  "window predictions must be [1,C,", plan.window, ",H,W], got ", shape_str(s0));
  for (const Tensor& p : preds)
    ANIMLAB_REQUIRE(p.shape() == s0, "prediction shapes disagree: ", shape_str(p.shape()), " vs ",
                    shape_str(s0));
  int64_t c = s0[1], h = s0[3], w = s0[4], hw = h * w;
  Tensor out({1, c, plan.total, h, w});
  std::vector<int64_t> hits(static_cast<size_t>(plan.total), 0);
  for (int64_t g = 0; g < plan.windows(); ++g)
    for (int64_t j = 0; j < plan.window; ++j) {
      if (drop_pad && plan.is_pad(g, j)) continue;
      int64_t f = plan.frame_of(g, j);
      ++hits[static_cast<size_t>(f)];
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* src = preds[static_cast<size_t>(g)].data() + (ch * plan.window + j) * hw;
        double* dst = out.data() + (ch * plan.total + f) * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
      }
    }
  for (int64_t f = 0; f < plan.total; ++f) {
    ANIMLAB_REQUIRE(hits[static_cast<size_t>(f)] > 0, "frame ", f, " lost all its contributions");
    double inv = 1.0 / static_cast<double>(hits[static_cast<size_t>(f)]);
    for (int64_t ch = 0; ch < c; ++ch) {
      double* dst = &out[(ch * plan.total + f) * hw];
      for (int64_t i = 0; i < hw; ++i) dst[i] *= inv;
    }
  }
  return out;
}

}  // namespace animlab
