#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "animlab/optimizer.hpp"
#include "animlab/pipeline.hpp"

namespace animlab {

enum class TrainingCase { ImageRecon, ImagePose, Video };

inline const char* training_case_name(TrainingCase c) {
  switch (c) {
    case TrainingCase::ImageRecon: return "image_recon";
    case TrainingCase::ImagePose: return "image_pose";
    default: return "video";
  }
}

struct TrainConfig {
  double tau0 = 0.3;  // stage 1: image-reconstruction share
  double tau1 = 0.1;  // stage 2 thresholds, 0 <= tau1 <= tau2 <= 1
  double tau2 = 0.3;
  int64_t clip_frames = 8;  // K
  int64_t stage1_steps = 200;
  int64_t stage2_steps = 300;
  int64_t batch_stage1 = 4;
  double lr = 1e-4;
  uint64_t seed = 7;
  bool stage1_train_backbone = true;  // a random-init backbone has to learn alongside
};

inline void validate_train_config(const TrainConfig& c) {
  ANIMLAB_REQUIRE(c.tau0 >= 0.0 && c.tau0 <= 1.0, "tau0 must lie in [0,1], got ", c.tau0);
  ANIMLAB_REQUIRE(c.tau1 >= 0.0 && c.tau1 <= c.tau2 && c.tau2 <= 1.0,
                  "thresholds need 0 <= tau1 <= tau2 <= 1, got tau1=", c.tau1, " tau2=", c.tau2);
  ANIMLAB_REQUIRE(c.clip_frames >= 1, "clip_frames must be positive, got ", c.clip_frames);
  ANIMLAB_REQUIRE(c.stage1_steps >= 0 && c.stage2_steps >= 0, "step counts cannot be negative");
  ANIMLAB_REQUIRE(c.batch_stage1 >= 1, "batch_stage1 must be positive, got ", c.batch_stage1);
  ANIMLAB_REQUIRE(c.lr > 0.0, "lr must be positive, got ", c.lr);
}

// Three-branch case draw; boundary ties go to the lower branch.
// Stage 1 has no video branch: tau0 splits reconstruction from posed images.
inline TrainingCase select_training_case(double r, int stage, double tau0, double tau1,
                                         double tau2) {
  ANIMLAB_REQUIRE(r >= 0.0 && r <= 1.0, "case draw r=", r, " outside [0,1]");
  ANIMLAB_REQUIRE(stage == 1 || stage == 2, "stage must be 1 or 2, got ", stage);
  if (stage == 1) return r <= tau0 ? TrainingCase::ImageRecon : TrainingCase::ImagePose;
  if (r <= tau1) return TrainingCase::ImageRecon;
  if (r <= tau2) return TrainingCase::ImagePose;
  return TrainingCase::Video;
}

inline TrainingCase select_training_case(double r, int stage, const TrainConfig& cfg) {
  return select_training_case(r, stage, cfg.tau0, cfg.tau1, cfg.tau2);
}

// Per-stage trainable sets. Stage 1: both conditioning branches, plus the
// backbone's non-temporal weights when asked (temporal layers never move).
// Stage 2: only the backbone's temporal attention weights.
inline void apply_stage1_masks(DiffusionModel& m, bool train_backbone) {
  m.backbone.params.set_requires_grad_if([&](const std::string& n) {
    return train_backbone && n.find(".temporal.") == std::string::npos;
  });
  m.appearance.params.set_requires_grad_all(true);
  m.pose.params.set_requires_grad_all(true);
}

inline void apply_stage2_masks(DiffusionModel& m) {
  m.backbone.params.set_requires_grad_if(
      [](const std::string& n) { return n.find(".temporal.") != std::string::npos; });
  m.appearance.params.set_requires_grad_all(false);
  m.pose.params.set_requires_grad_all(false);
}

// Fully qualified names of everything currently marked trainable.
inline std::vector<std::string> trainable_names(const DiffusionModel& m) {
  std::vector<std::string> out;
  auto collect = [&](const char* prefix, const ParamStore& ps) {
    for (const auto& [name, v] : ps.entries)
      if (v.requires_grad()) out.push_back(std::string(prefix) + "." + name);
  };
  collect("backbone", m.backbone.params);
  collect("appearance", m.appearance.params);
  collect("pose", m.pose.params);
  return out;
}

namespace detail {

inline void validate_clips(const DiffusionModel& m, const std::vector<VideoClip>& clips) {
  if (clips.empty()) throw ConfigError("training dataset is empty");
  for (size_t i = 0; i < clips.size(); ++i) {
    const VideoClip& c = clips[i];
    ANIMLAB_REQUIRE(c.frames.shape().size() == 4 && c.frames.dim(0) >= 1, "clip ", i,
                    " frames must be [N,C,H,W], got ", shape_str(c.frames.shape()));
    int64_t n = c.frames.dim(0);
    ANIMLAB_REQUIRE(c.frames.dim(1) == m.cfg.in_channels && c.frames.dim(2) == m.cfg.height &&
                        c.frames.dim(3) == m.cfg.width,
                    "clip ", i, " frames ", shape_str(c.frames.shape()),
                    " do not match the model");
    ANIMLAB_REQUIRE(c.poses.shape() == Shape({n, m.pose_channels, m.cfg.height, m.cfg.width}),
                    "clip ", i, " poses ", shape_str(c.poses.shape()), " do not pair with ", n,
                    " frames");
  }
}

// [R, ...] row-major window copy of `k` rows starting at `start`.
inline Tensor rows_window(const Tensor& t, int64_t start, int64_t k) {
  Shape s = t.shape();
  int64_t per = t.numel() / s[0];
  Shape os = s;
  os[0] = k;
  Tensor out(os);
  std::copy(t.data() + start * per, t.data() + (start + k) * per, out.data());
  return out;
}

inline TrainSample image_sample(const std::vector<VideoClip>& clips, Rng& rng, bool recon) {
  const VideoClip& c = clips[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(clips.size())))];
  int64_t n = c.frames.dim(0);
  int64_t fr = rng.uniform_int(n);
  int64_t ft = recon ? fr : rng.uniform_int(n);
  TrainSample s;
  s.ref = rows_window(c.frames, fr, 1).reshaped({c.frames.dim(1), c.frames.dim(2), c.frames.dim(3)});
  s.frames = rows_window(c.frames, ft, 1);
  s.poses = rows_window(c.poses, ft, 1);
  return s;
}

inline TrainSample video_sample(const std::vector<VideoClip>& clips, int64_t k, Rng& rng) {
  const VideoClip& c = clips[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(clips.size())))];
  int64_t n = c.frames.dim(0);
  ANIMLAB_REQUIRE(n >= k, "clip of ", n, " frames cannot yield a ", k, "-frame window");
  int64_t fr = rng.uniform_int(n);
  int64_t start = rng.uniform_int(n - k + 1);
  TrainSample s;
  s.ref = rows_window(c.frames, fr, 1).reshaped({c.frames.dim(1), c.frames.dim(2), c.frames.dim(3)});
  s.frames = rows_window(c.frames, start, k);
  s.poses = rows_window(c.poses, start, k);
  return s;
}

}  // namespace detail

struct LossRow {
  int64_t step = 0;
  int stage = 0;
  TrainingCase kase = TrainingCase::ImageRecon;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossRow> rows;

  double mean_loss(size_t from, size_t count) const {
    double s = 0.0;
    for (size_t i = from; i < from + count; ++i) s += rows[i].loss;
    return s / static_cast<double>(count);
  }
};

// Stage 1: single-frame training of the conditioning branches (and, by
// default, the 2D backbone). Temporal layers stay untouched.
inline TrainResult train_stage1(DiffusionModel& model, const std::vector<VideoClip>& clips,
                                const TrainConfig& cfg) {
  validate_train_config(cfg);
  detail::validate_clips(model, clips);
  apply_stage1_masks(model, cfg.stage1_train_backbone);
  Rng rng = derive_rng(cfg.seed, "stage1");
  Adam ob(cfg.lr), oa(cfg.lr), op(cfg.lr);
  TrainResult res;
  for (int64_t step = 0; step < cfg.stage1_steps; ++step) {
    TrainingCase kase = select_training_case(rng.uniform(), 1, cfg);
    std::vector<TrainSample> batch;
    for (int64_t i = 0; i < cfg.batch_stage1; ++i)
      batch.push_back(detail::image_sample(clips, rng, kase == TrainingCase::ImageRecon));
    model.backbone.params.zero_grads();
    model.appearance.params.zero_grads();
    model.pose.params.zero_grads();
    ad::Var loss = stage1_loss(model, batch, rng);
    ad::backward(loss);
    ob.step(model.backbone.params);
    oa.step(model.appearance.params);
    op.step(model.pose.params);
    res.rows.push_back({step, 1, kase, loss.val()[0]});
  }
  return res;
}

// Stage 2: joint image/video sampling, optimizing only temporal attention.
// The model must already hold the stage-1 weights.
inline TrainResult train_stage2(DiffusionModel& model, const std::vector<VideoClip>& clips,
                                const TrainConfig& cfg) {
  validate_train_config(cfg);
  detail::validate_clips(model, clips);
  apply_stage2_masks(model);
  Rng rng = derive_rng(cfg.seed, "stage2");
  Adam ot(cfg.lr);
  TrainResult res;
  for (int64_t step = 0; step < cfg.stage2_steps; ++step) {
    TrainingCase kase = select_training_case(rng.uniform(), 2, cfg);
    std::vector<TrainSample> batch;
    int64_t expect_k = 1;
    if (kase == TrainingCase::Video) {
      batch.push_back(detail::video_sample(clips, cfg.clip_frames, rng));
      expect_k = cfg.clip_frames;
    } else {
      batch.push_back(detail::image_sample(clips, rng, kase == TrainingCase::ImageRecon));
    }
    model.backbone.params.zero_grads();
    ad::Var loss = stage2_loss(model, batch, expect_k, rng);
    ad::backward(loss);
    ot.step(model.backbone.params);
    res.rows.push_back({step, 2, kase, loss.val()[0]});
  }
  return res;
}

}  // namespace animlab
