#pragma once

#include <algorithm>
#include <vector>

#include "animlab/pipeline.hpp"
#include "animlab/sampler.hpp"
#include "animlab/segment.hpp"

namespace animlab {

struct AnimateConfig {
  int64_t window = 8;  // K
  int64_t stride = 4;  // s
  SamplerKind sampler = SamplerKind::DDIM;
  int64_t sample_steps = 25;  // ddim only; ddpm always walks the full schedule
  NoiseMode noise_mode = NoiseMode::Shared;
  bool drop_pad = false;
  bool temporal = true;  // ablation switch: run windows without temporal attention
  uint64_t seed = 0;
};

// Sliding-window denoising of an N-frame video. One N-frame latent is kept
// across timesteps; at every step each window predicts its own noise, the
// predictions are averaged into an N-frame estimate, and a single reverse
// step moves the whole latent. ref: [C,H,W] in [-1,1]; poses: [N,P,H,W].
// Returns pixel frames [N,C,H,W] clamped to [-1,1].
inline Tensor animate_long(const DiffusionModel& model, const Tensor& ref, const Tensor& poses,
                           const AnimateConfig& cfg) {
  ad::NoGrad ng;
  const int64_t c = model.cfg.in_channels, h = model.cfg.height, w = model.cfg.width;
  ANIMLAB_REQUIRE(ref.shape() == Shape({c, h, w}), "reference shape ", shape_str(ref.shape()),
                  " does not match the configured latent");
  ANIMLAB_REQUIRE(poses.shape().size() == 4, "poses expect [N,P,H,W], got ",
                  shape_str(poses.shape()));
  const int64_t n = poses.dim(0), p = poses.dim(1);
  ANIMLAB_REQUIRE(p == model.pose_channels && poses.dim(2) == h && poses.dim(3) == w,
                  "pose shape ", shape_str(poses.shape()), " does not match the model");
  ANIMLAB_REQUIRE(n >= cfg.window, "cannot animate ", n, " frames with window ", cfg.window);

  SegmentPlan plan = plan_segments(n, cfg.window, cfg.stride);
  std::vector<Tensor> init = assign_initial_noise(plan, cfg.noise_mode, c, h, w, cfg.seed);
  Tensor z = fuse_predictions(init, plan);  // [1,C,N,H,W]

  Tensor ref_b({1, c, h, w});
  for (int64_t i = 0; i < ref.numel(); ++i) ref_b[i] = ref[i];

  std::vector<int64_t> ladder;
  if (cfg.sampler == SamplerKind::DDIM) {
    ladder = ddim_timesteps(model.schedule.T, cfg.sample_steps);
  } else {
    for (int64_t t = model.schedule.T - 1; t >= 0; --t) ladder.push_back(t);
  }

  Rng step_rng = derive_rng(cfg.seed, "step_noise");
  const int64_t hw = h * w;
  for (size_t li = 0; li < ladder.size(); ++li) {
    int64_t t = ladder[li];
    NamedTokens ya =
        model.encode_reference(ref_b, {t}, derive_seed(cfg.seed, "ref", static_cast<uint64_t>(t)));
    std::vector<Tensor> eps_w;
    for (int64_t g = 0; g < plan.windows(); ++g) {
      Tensor zw = slice_frames(z, plan, g);
      Tensor pw({1, cfg.window, p, h, w});
      for (int64_t j = 0; j < cfg.window; ++j) {
        int64_t f = plan.frame_of(g, j);
        std::copy(poses.data() + f * p * hw, poses.data() + (f + 1) * p * hw,
                  pw.data() + j * p * hw);
      }
      eps_w.push_back(
          model.predict_noise(ad::Var::leaf(std::move(zw)), {t}, ya, pw, cfg.temporal).val());
    }
    Tensor eps = fuse_predictions(eps_w, plan, cfg.drop_pad);

    if (cfg.sampler == SamplerKind::DDIM) {
      int64_t t_to = li + 1 < ladder.size() ? ladder[li + 1] : -1;
      z = ddim_step_between(z, eps, model.schedule.alpha_bar_at(t),
                            model.schedule.alpha_bar_at(t_to));
    } else if (t > 0) {
      Tensor xi = step_rng.normal_tensor(z.shape());
      z = reverse_step(z, eps, t, model.schedule, SamplerKind::DDPM, &xi);
    } else {
      z = reverse_step(z, eps, t, model.schedule, SamplerKind::DDPM);
    }
  }

  Tensor out({n, c, h, w});
  for (int64_t f = 0; f < n; ++f)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < hw; ++i)
        out[(f * c + ch) * hw + i] = std::clamp(z[(ch * n + f) * hw + i], -1.0, 1.0);
  return out;
}

}  // namespace animlab
