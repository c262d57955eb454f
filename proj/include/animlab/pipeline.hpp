#pragma once

#include <cmath>
#include <vector>

#include "animlab/appearance.hpp"
#include "animlab/pose_control.hpp"
#include "animlab/schedule.hpp"
#include "animlab/unet.hpp"

namespace animlab {

// A full clip as produced by the data generator.
struct VideoClip {
  Tensor frames;  // [N, C, H, W] in [-1, 1]
  Tensor poses;   // [N, P, H, W] one-hot part channels
  uint64_t identity = 0;  // seed that chose the colors
  uint64_t motion = 0;    // seed that chose the trajectories
};

// One training example: a reference image plus the frames and matching pose
// maps of the clip (single-frame cases use K = 1).
struct TrainSample {
  Tensor ref;     // [C, H, W]
  Tensor frames;  // [K, C, H, W]
  Tensor poses;   // [K, P, H, W]
};

// The composed denoiser: temporal backbone, appearance encoder feeding the
// hybrid attention sites, pose branch feeding the residual sites, and the
// shared noise schedule.
struct DiffusionModel {
  BackboneConfig cfg;
  int64_t pose_channels = 6;
  bool clean_reference = false;  // feed the raw reference at t=0 instead of noising it
  NoiseSchedule schedule;
  TemporalUNet backbone;
  AppearanceEncoder appearance;
  PoseControlNet pose;

  static DiffusionModel create(const BackboneConfig& cfg, int64_t pose_channels,
                               const NoiseSchedule& schedule, uint64_t seed,
                               bool clean_reference = false) {
    ANIMLAB_REQUIRE(pose_channels >= 1, "pose_channels must be >= 1, got ", pose_channels);
    DiffusionModel m;
    m.cfg = cfg;
    m.pose_channels = pose_channels;
    m.clean_reference = clean_reference;
    m.schedule = schedule;
    m.backbone = TemporalUNet::create(cfg, derive_seed(seed, "backbone"));
    m.appearance = AppearanceEncoder::create(cfg, derive_seed(seed, "appearance"));
    m.pose = PoseControlNet::create(cfg, pose_channels, derive_seed(seed, "pose"));
    // both conditioning branches start as copies of the backbone's 2d weights
    m.appearance.clone_init_from(m.backbone.params);
    m.pose.clone_init_from(m.backbone.params);
    return m;
  }

  // Encode the reference images for a batch at the given per-sample steps.
  // Unless clean_reference is set, each reference is noised to its sample's
  // own timestep with noise drawn from `noise_seed`.
  NamedTokens encode_reference(const Tensor& refs, const std::vector<int64_t>& ts,
                               uint64_t noise_seed) const {
    ANIMLAB_REQUIRE(refs.shape().size() == 4, "references expect [N,C,H,W], got ",
                    shape_str(refs.shape()));
    int64_t n = refs.dim(0);
    ANIMLAB_REQUIRE(static_cast<int64_t>(ts.size()) == n, "got ", ts.size(), " timesteps for ", n,
                    " references");
    for (int64_t t : ts) schedule.check_t(t);
    if (clean_reference) return appearance.encode(ad::Var::leaf(refs), std::vector<int64_t>(static_cast<size_t>(n), 0));

    Rng rng = derive_rng(noise_seed, "ref_noise");
    Tensor eps = rng.normal_tensor(refs.shape());
    Tensor noised(refs.shape());
    int64_t per = refs.numel() / n;
    for (int64_t i = 0; i < n; ++i) {
      double ab = schedule.alpha_bar_at(ts[static_cast<size_t>(i)]);
      double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
      for (int64_t j = 0; j < per; ++j)
        noised[i * per + j] = a * refs[i * per + j] + b * eps[i * per + j];
    }
    return appearance.encode(ad::Var::leaf(noised), ts);
  }

  // eps_hat for a noisy segment, with the appearance tokens already encoded.
  ad::Var predict_noise(const ad::Var& z, const std::vector<int64_t>& ts, const NamedTokens& ref_tokens,
                        const Tensor& poses, bool temporal_on) const {
    for (int64_t t : ts) schedule.check_t(t);
    NamedResiduals yp = pose.encode(z, poses, ts);
    return backbone.forward(z, ts, &ref_tokens, &yp, temporal_on);
  }

  // Convenience overload that encodes the references in the same call.
  ad::Var predict_noise(const ad::Var& z, const std::vector<int64_t>& ts, const Tensor& refs,
                        const Tensor& poses, uint64_t ref_noise_seed, bool temporal_on) const {
    NamedTokens ya = encode_reference(refs, ts, ref_noise_seed);
    return predict_noise(z, ts, ya, poses, temporal_on);
  }
};

namespace detail {

// Pack a batch of samples into [N,C,K,H,W] targets, [N,C,H,W] references and
// [N,K,P,H,W] poses, validating every shape against the model config.
struct PackedBatch {
  Tensor x0, refs, poses;
  int64_t n = 0, k = 0;
};

inline PackedBatch pack_batch(const DiffusionModel& model, const std::vector<TrainSample>& batch) {
  ANIMLAB_REQUIRE(!batch.empty(), "training batch must not be empty");
  const int64_t c = model.cfg.in_channels, h = model.cfg.height, w = model.cfg.width;
  const int64_t p = model.pose_channels;
  const int64_t n = static_cast<int64_t>(batch.size());
  const int64_t k = batch[0].frames.dim(0);
  PackedBatch out;
  out.n = n;
  out.k = k;
  out.x0 = Tensor({n, c, k, h, w});
  out.refs = Tensor({n, c, h, w});
  out.poses = Tensor({n, k, p, h, w});
  const int64_t hw = h * w;
  for (int64_t i = 0; i < n; ++i) {
    const TrainSample& s = batch[static_cast<size_t>(i)];
    ANIMLAB_REQUIRE(s.ref.shape() == Shape({c, h, w}), "sample ", i, " reference shape ",
                    shape_str(s.ref.shape()));
    ANIMLAB_REQUIRE(s.frames.shape() == Shape({k, c, h, w}), "sample ", i, " frame shape ",
                    shape_str(s.frames.shape()), " (expected ", k, " frames)");
    ANIMLAB_REQUIRE(s.poses.shape() == Shape({k, p, h, w}), "sample ", i, " pose shape ",
                    shape_str(s.poses.shape()));
    for (int64_t j = 0; j < c * hw; ++j) out.refs[i * c * hw + j] = s.ref[j];
    for (int64_t j = 0; j < k * p * hw; ++j) out.poses[i * k * p * hw + j] = s.poses[j];
    // frames arrive frame-major, the latent is channel-major
    for (int64_t f = 0; f < k; ++f)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t q = 0; q < hw; ++q)
          out.x0[((i * c + ch) * k + f) * hw + q] = s.frames[(f * c + ch) * hw + q];
  }
  return out;
}

}  // namespace detail

// Draws per-sample timesteps and noise from `rng`, runs the composed
// denoiser and returns MSE against the true noise.
inline ad::Var denoising_loss(const DiffusionModel& model, const std::vector<TrainSample>& batch,
                              Rng& rng, bool temporal_on) {
  detail::PackedBatch b = detail::pack_batch(model, batch);
  std::vector<int64_t> ts(static_cast<size_t>(b.n));
  for (auto& t : ts) t = rng.uniform_int(model.schedule.T);
  Tensor eps = rng.normal_tensor(b.x0.shape());
  uint64_t ref_seed = rng.bits();
  Tensor z(b.x0.shape());
  int64_t per = b.x0.numel() / b.n;
  for (int64_t i = 0; i < b.n; ++i) {
    double ab = model.schedule.alpha_bar_at(ts[static_cast<size_t>(i)]);
    double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (int64_t j = 0; j < per; ++j) z[i * per + j] = a * b.x0[i * per + j] + s * eps[i * per + j];
  }
  ad::Var eps_hat =
      model.predict_noise(ad::Var::leaf(std::move(z)), ts, b.refs, b.poses, ref_seed, temporal_on);
  return ad::mse(eps_hat, ad::Var::leaf(std::move(eps)));
}

// Stage 1 trains on single frames with the temporal layers switched off.
inline ad::Var stage1_loss(const DiffusionModel& model, const std::vector<TrainSample>& batch,
                           Rng& rng) {
  ANIMLAB_REQUIRE(!batch.empty(), "stage 1 needs a nonempty batch");
  for (size_t i = 0; i < batch.size(); ++i)
    ANIMLAB_REQUIRE(batch[i].frames.dim(0) == 1, "stage 1 trains single frames, sample ", i,
                    " has ", batch[i].frames.dim(0));
  return denoising_loss(model, batch, rng, false);
}

// Stage 2 runs the full temporal network. `expect_k` pins the frame count of
// the batch (clip length for video cases, 1 for image cases).
inline ad::Var stage2_loss(const DiffusionModel& model, const std::vector<TrainSample>& batch,
                           int64_t expect_k, Rng& rng) {
  ANIMLAB_REQUIRE(!batch.empty(), "stage 2 needs a nonempty batch");
  for (size_t i = 0; i < batch.size(); ++i)
    ANIMLAB_REQUIRE(batch[i].frames.dim(0) == expect_k, "stage 2 expected ", expect_k,
                    " frames, sample ", i, " has ", batch[i].frames.dim(0));
  return denoising_loss(model, batch, rng, true);
}

}  // namespace animlab
