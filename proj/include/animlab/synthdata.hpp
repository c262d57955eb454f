#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "animlab/pipeline.hpp"
#include "animlab/random.hpp"

namespace animlab {

// Articulated 2D stick figure: six body parts, each rasterized as a capsule
// into its own pose channel. Fixed priority keeps the map one-hot.
inline constexpr int64_t kPoseParts = 6;

inline const char* part_name(int64_t p) {
  static const char* names[kPoseParts] = {"head",  "torso", "arm_l",
                                          "arm_r", "leg_l", "leg_r"};
  ANIMLAB_REQUIRE(p >= 0 && p < kPoseParts, "part index out of range: ", p);
  return names[p];
}

struct FigureState {
  // torso lean, head tilt, left/right arm, left/right leg; radians in [-pi, pi]
  std::array<double, 6> angles{};
  double root_x = 0.5;  // pelvis, normalized image coords
  double root_y = 0.58;
  // segment lengths and radii in units of min(H, W); constant across clips so
  // pose maps depend on motion alone
  double torso_len = 0.26, arm_len = 0.24, leg_len = 0.26, head_offset = 0.14;
  double torso_r = 0.07, head_r = 0.09, limb_r = 0.05;
  std::array<double, 3> body_color{0.6, 0.3, 0.2};
  std::array<double, 3> bg_color{-0.7, -0.7, -0.6};
};

namespace detail {

struct Capsule {
  double x0, y0, x1, y1, r;
};

inline bool hits(const Capsule& c, double px, double py) {
  double dx = c.x1 - c.x0, dy = c.y1 - c.y0;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - c.x0) * dx + (py - c.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double gx = c.x0 + t * dx - px, gy = c.y0 + t * dy - py;
  return gx * gx + gy * gy <= c.r * c.r;
}

// Capsules in channel order, which is also the overlap priority order:
// head > torso > arms > legs.
inline std::array<Capsule, kPoseParts> figure_capsules(const FigureState& st, int64_t h,
                                                       int64_t w) {
  double s = static_cast<double>(std::min(h, w));
  double rx = st.root_x * static_cast<double>(w);
  double ry = st.root_y * static_cast<double>(h);

  // up(a) leans the torso, down(a) swings a limb; a = 0 is vertical
  auto up_x = [&](double a) { return std::sin(a); };
  auto up_y = [&](double a) { return -std::cos(a); };
  auto down_x = up_x;
  auto down_y = [&](double a) { return std::cos(a); };

  double lean = st.angles[0];
  double top_x = rx + s * st.torso_len * up_x(lean);
  double top_y = ry + s * st.torso_len * up_y(lean);
  double head_a = lean + st.angles[1];
  double head_x = top_x + s * st.head_offset * up_x(head_a);
  double head_y = top_y + s * st.head_offset * up_y(head_a);

  std::array<Capsule, kPoseParts> caps;
  caps[0] = {head_x, head_y, head_x, head_y, s * st.head_r};
  caps[1] = {rx, ry, top_x, top_y, s * st.torso_r};
  caps[2] = {top_x, top_y, top_x + s * st.arm_len * down_x(st.angles[2]),
             top_y + s * st.arm_len * down_y(st.angles[2]), s * st.limb_r};
  caps[3] = {top_x, top_y, top_x + s * st.arm_len * down_x(st.angles[3]),
             top_y + s * st.arm_len * down_y(st.angles[3]), s * st.limb_r};
  caps[4] = {rx, ry, rx + s * st.leg_len * down_x(st.angles[4]),
             ry + s * st.leg_len * down_y(st.angles[4]), s * st.limb_r};
  caps[5] = {rx, ry, rx + s * st.leg_len * down_x(st.angles[5]),
             ry + s * st.leg_len * down_y(st.angles[5]), s * st.limb_r};
  return caps;
}

}  // namespace detail

// One-hot part map [P, H, W]: the highest-priority capsule covering a pixel
// center claims it.
inline Tensor render_pose_map(const FigureState& st, int64_t h, int64_t w) {
  ANIMLAB_REQUIRE(h >= 16 && w >= 16, "pose map needs h, w >= 16, got ", h, "x", w);
  auto caps = detail::figure_capsules(st, h, w);
  Tensor out({kPoseParts, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (int64_t p = 0; p < kPoseParts; ++p)
        if (detail::hits(caps[p], px, py)) {
          out[(p * h + y) * w + x] = 1.0;
          break;
        }
    }
  return out;
}

// RGB frame [3, H, W] painted from the pose map so the body pixels and the
// pose foreground agree exactly.
inline Tensor render_frame(const FigureState& st, const Tensor& pose_map) {
  ANIMLAB_REQUIRE(pose_map.shape().size() == 3 && pose_map.dim(0) == kPoseParts,
                  "pose map must be [P, H, W]");
  int64_t h = pose_map.dim(1), w = pose_map.dim(2);
  Tensor out({3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      bool body = false;
      for (int64_t p = 0; p < kPoseParts && !body; ++p)
        body = pose_map[(p * h + y) * w + x] != 0.0;
      for (int64_t c = 0; c < 3; ++c)
        out[(c * h + y) * w + x] = body ? st.body_color[c] : st.bg_color[c];
    }
  return out;
}

inline Tensor render_frame(const FigureState& st, int64_t h, int64_t w) {
  return render_frame(st, render_pose_map(st, h, w));
}

// Sinusoidal joint trajectories plus a gentle root bob/sway.
struct MotionParams {
  std::array<double, 6> center, amp, omega, phase;
  double sway_amp, sway_omega, sway_phase;
  double bob_amp, bob_omega, bob_phase;
};

inline MotionParams draw_motion(uint64_t motion_seed) {
  Rng rng = derive_rng(motion_seed, "motion");
  MotionParams m;
  const double rest[6] = {0.0, 0.0, -0.5, 0.5, -0.22, 0.22};
  const double jitter[6] = {0.15, 0.2, 0.2, 0.2, 0.1, 0.1};
  const double amp_lo[6] = {0.05, 0.1, 0.25, 0.25, 0.15, 0.15};
  const double amp_hi[6] = {0.2, 0.3, 0.6, 0.6, 0.35, 0.35};
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (int j = 0; j < 6; ++j) {
    m.center[j] = rest[j] + rng.uniform(-jitter[j], jitter[j]);
    m.amp[j] = rng.uniform(amp_lo[j], amp_hi[j]);
    m.omega[j] = two_pi * rng.uniform(0.5, 2.0) / 16.0;  // period 8..32 frames
    m.phase[j] = rng.uniform(0.0, two_pi);
  }
  m.sway_amp = rng.uniform(0.005, 0.03);
  m.sway_omega = two_pi * rng.uniform(0.5, 1.5) / 16.0;
  m.sway_phase = rng.uniform(0.0, two_pi);
  m.bob_amp = rng.uniform(0.005, 0.02);
  m.bob_omega = two_pi * rng.uniform(0.5, 1.5) / 16.0;
  m.bob_phase = rng.uniform(0.0, two_pi);
  return m;
}

inline void draw_identity(uint64_t identity_seed, FigureState& st) {
  Rng rng = derive_rng(identity_seed, "identity");
  for (int c = 0; c < 3; ++c) st.body_color[c] = rng.uniform(0.15, 0.9);
  for (int c = 0; c < 3; ++c) st.bg_color[c] = rng.uniform(-0.9, -0.25);
}

inline FigureState figure_at(const MotionParams& m, int64_t frame) {
  const double pi = 3.14159265358979323846;
  FigureState st;
  double f = static_cast<double>(frame);
  for (int j = 0; j < 6; ++j)
    st.angles[j] = std::clamp(m.center[j] + m.amp[j] * std::sin(m.omega[j] * f + m.phase[j]),
                              -pi, pi);
  st.root_x = 0.5 + m.sway_amp * std::sin(m.sway_omega * f + m.sway_phase);
  st.root_y = 0.58 + m.bob_amp * std::sin(m.bob_omega * f + m.bob_phase);
  return st;
}

// Deterministic clip: identity_seed picks the colors, motion_seed picks the
// trajectories, so two identities given one motion share their pose maps.
inline VideoClip generate_clip(uint64_t identity_seed, uint64_t motion_seed, int64_t n,
                               int64_t h, int64_t w) {
  ANIMLAB_REQUIRE(n >= 1, "clip needs at least one frame, got ", n);
  ANIMLAB_REQUIRE(h >= 16 && w >= 16, "clip needs h, w >= 16, got ", h, "x", w);
  MotionParams motion = draw_motion(motion_seed);

  VideoClip clip;
  clip.identity = identity_seed;
  clip.motion = motion_seed;
  clip.frames = Tensor({n, 3, h, w});
  clip.poses = Tensor({n, kPoseParts, h, w});
  for (int64_t f = 0; f < n; ++f) {
    FigureState st = figure_at(motion, f);
    draw_identity(identity_seed, st);
    Tensor pose = render_pose_map(st, h, w);
    Tensor frame = render_frame(st, pose);
    std::copy(pose.data(), pose.data() + pose.numel(),
              clip.poses.data() + f * kPoseParts * h * w);
    std::copy(frame.data(), frame.data() + frame.numel(),
              clip.frames.data() + f * 3 * h * w);
  }
  return clip;
}

}  // namespace animlab
