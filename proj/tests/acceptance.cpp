// Acceptance gate. Runs the eight release criteria end to end and prints one
// [PASS]/[FAIL] line per criterion (plus the trained-model pose-control
// invariant). Exit code is nonzero if anything failed.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "animlab/animate.hpp"
#include "animlab/checkpoint.hpp"
#include "animlab/config.hpp"
#include "animlab/metrics.hpp"
#include "animlab/synthdata.hpp"
#include "animlab/trainer.hpp"
#include "helpers.hpp"

using namespace animlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const char* label, bool ok, const std::string& detail) {
  std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", label, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 3) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

Tensor clip_ref(const VideoClip& c) {
  Tensor ref({c.frames.dim(1), c.frames.dim(2), c.frames.dim(3)});
  std::copy(c.frames.data(), c.frames.data() + ref.numel(), ref.data());
  return ref;
}

std::vector<std::pair<std::string, Tensor>> snapshot(const DiffusionModel& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  detail::for_each_store(m, [&](const char* prefix, const ParamStore& ps) {
    for (const auto& [name, v] : ps.entries) out.emplace_back(cat(prefix, ".", name), v.val());
  });
  return out;
}

bool is_temporal(const std::string& name) { return name.find(".temporal.") != std::string::npos; }

// ---------------------------------------------------------------- criterion 1

void criterion_oracles() {
  auto t0 = Clock::now();
  double worst = 0.0;

  // attention kernels against the plain-loop oracle
  Rng r(101);
  for (const Shape& dims : {Shape{2, 4, 3, 2, 2}, Shape{1, 6, 5, 3, 2}}) {
    int64_t n = dims[0], c = dims[1], k = dims[2], h = dims[3], w = dims[4];
    Tensor f = r.normal_tensor(dims);
    Tensor wq = r.normal_tensor({c, c}), wk = r.normal_tensor({c, c});
    Tensor wv = r.normal_tensor({c, c}), wo = r.normal_tensor({c, c});
    AttentionParams p;
    p.w_q = ad::Var::leaf(wq, false);
    p.w_k = ad::Var::leaf(wk, false);
    p.w_v = ad::Var::leaf(wv, false);
    p.w_out = ad::Var::leaf(wo, false);
    Tensor got = temporal_attention(ad::Var::leaf(f), p).val();
    Tensor pe = sinusoidal_position_encoding(k, c);
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          Tensor u({k, c});
          for (int64_t t = 0; t < k; ++t)
            for (int64_t ch = 0; ch < c; ++ch)
              u.at({t, ch}) = f.at({ni, ch, t, y, x}) + pe.at({t, ch});
          Tensor mixed = testutil::naive_attend(u, u, wq, wk, wv, wo);
          for (int64_t t = 0; t < k; ++t)
            for (int64_t ch = 0; ch < c; ++ch)
              worst = std::max(worst, testutil::rel_err(got.at({ni, ch, t, y, x}),
                                                        f.at({ni, ch, t, y, x}) + mixed.at({t, ch})));
        }

    // hybrid spatial attention over concatenated keys/values, same weights
    int64_t sa = 3;
    Tensor f4 = r.normal_tensor({n, c, h, w});
    Tensor ya = r.normal_tensor({n, sa, c});
    Tensor got4 =
        spatial_hybrid_attention(ad::Var::leaf(f4), p, ad::Var::leaf(ya)).val();
    for (int64_t bi = 0; bi < n; ++bi) {
      Tensor tok({h * w, c});
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          for (int64_t ch = 0; ch < c; ++ch) tok.at({y * w + x, ch}) = f4.at({bi, ch, y, x});
      Tensor kv({h * w + sa, c});
      for (int64_t i = 0; i < h * w; ++i)
        for (int64_t ch = 0; ch < c; ++ch) kv.at({i, ch}) = tok.at({i, ch});
      for (int64_t i = 0; i < sa; ++i)
        for (int64_t ch = 0; ch < c; ++ch) kv.at({h * w + i, ch}) = ya.at({bi, i, ch});
      Tensor mixed = testutil::naive_attend(tok, kv, wq, wk, wv, wo);
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          for (int64_t ch = 0; ch < c; ++ch)
            worst = std::max(worst, testutil::rel_err(got4.at({bi, ch, y, x}),
                                                      f4.at({bi, ch, y, x}) +
                                                          mixed.at({y * w + x, ch})));
    }
  }
  bool attention_ok = worst <= 1e-6;

  // window plans and fusion against brute-force coverage/averaging
  int64_t plans = 0;
  bool plan_ok = true;
  Rng fr(102);
  for (int64_t k : {int64_t(4), int64_t(8), int64_t(16)})
    for (int64_t n = k; n <= 64 && plan_ok; ++n)
      for (int64_t s = 1; s < k; ++s) {
        SegmentPlan plan = plan_segments(n, k, s);
        ++plans;
        int64_t hop = k - s;
        int64_t extra = (n - k + hop - 1) / hop;
        plan_ok &= plan.extra == extra && plan.windows() == extra + 1;
        for (int64_t g = 0; g < plan.windows(); ++g)
          plan_ok &= plan.starts[static_cast<size_t>(g)] == g * hop;
        plan_ok &= plan.pad_len == std::max<int64_t>(0, plan.starts.back() + k - n);

        std::vector<Tensor> preds;
        for (int64_t g = 0; g < plan.windows(); ++g) preds.push_back(fr.normal_tensor({1, 1, k, 1, 2}));
        std::vector<int64_t> hits(static_cast<size_t>(n), 0);
        std::vector<double> acc(static_cast<size_t>(n) * 2, 0.0);
        for (int64_t g = 0; g < plan.windows(); ++g)
          for (int64_t j = 0; j < k; ++j) {
            int64_t f = plan.frame_of(g, j);
            ++hits[static_cast<size_t>(f)];
            acc[static_cast<size_t>(f * 2)] += preds[static_cast<size_t>(g)][j * 2];
            acc[static_cast<size_t>(f * 2 + 1)] += preds[static_cast<size_t>(g)][j * 2 + 1];
          }
        Tensor fused = fuse_predictions(preds, plan);
        for (int64_t f = 0; f < n && plan_ok; ++f) {
          plan_ok &= hits[static_cast<size_t>(f)] >= 1;  // full coverage
          for (int64_t i = 0; i < 2; ++i) {
            double want = acc[static_cast<size_t>(f * 2 + i)] / hits[static_cast<size_t>(f)];
            plan_ok &= std::abs(fused[f * 2 + i] - want) <= 1e-12;
          }
        }
      }

  double dt = elapsed(t0);
  report("1 oracle suites", attention_ok && plan_ok && dt < 60.0,
         cat("attention worst rel ", num(worst), ", ", plans, " window plans vs brute force, ",
             num(dt), "s"));
}

// ---------------------------------------------------------------- criterion 2

void criterion_gradcheck() {
  auto t0 = Clock::now();
  BackboneConfig bc;
  bc.height = 16;
  bc.width = 16;
  bc.base_channels = 8;
  bc.channel_multipliers = {1, 2};
  bc.num_res_blocks = 1;
  bc.attention_resolutions = {8};
  bc.temporal_pe_max_len = 4;
  DiffusionModel model =
      DiffusionModel::create(bc, kPoseParts, make_noise_schedule(10, 1e-4, 0.02), 201);

  // break the zero-init structure so gradients reach every parameter group
  Rng jitter(205);
  detail::for_each_store(model, [&](const char*, ParamStore& ps) {
    for (auto& e : ps.entries) {
      Tensor& t = e.second.mutable_value();
      for (int64_t i = 0; i < t.numel(); ++i) t[i] += 0.05 * jitter.normal();
    }
  });

  VideoClip clip = generate_clip(derive_seed(202, "identity", 0), derive_seed(202, "motion", 0),
                                 2, 16, 16);
  TrainSample smp;
  smp.ref = clip_ref(clip);
  smp.frames = clip.frames;
  smp.poses = clip.poses;
  std::vector<TrainSample> batch{smp};

  // the draw seed is fixed, so the loss is a deterministic function of the params
  auto loss_var = [&]() {
    Rng rng(203);
    return stage2_loss(model, batch, 2, rng);
  };
  ad::Var loss = loss_var();
  ad::backward(loss);

  struct Probe {
    ad::Var* var;
    std::string name;
    int64_t idx;
  };
  std::vector<Probe> probes;
  std::set<std::pair<std::string, int64_t>> seen;
  // probe the strongest-gradient element of each drawn tensor; a random index
  // would often land on a near-zero slot where FD roundoff dominates
  auto strongest = [](const ad::Var& v) {
    int64_t best = 0;
    if (!v.has_grad()) return best;
    const Tensor& g = v.grad();
    for (int64_t i = 1; i < g.numel(); ++i)
      if (std::abs(g[i]) > std::abs(g[best])) best = i;
    return best;
  };
  Rng pick(204);
  detail::for_each_store(model, [&](const char* prefix, ParamStore& ps) {
    int64_t budget = 8;  // per store, so all three param groups are covered
    for (int64_t tries = 0; budget > 0 && tries < 64; ++tries) {
      auto& [name, v] = ps.entries[static_cast<size_t>(
          pick.uniform_int(static_cast<int64_t>(ps.entries.size())))];
      if (!seen.insert({cat(prefix, ".", name), 0}).second) continue;
      probes.push_back({&v, cat(prefix, ".", name), strongest(v)});
      --budget;
    }
  });
  // make sure a temporal weight is among them
  detail::for_each_store(model, [&](const char* prefix, ParamStore& ps) {
    if (std::string(prefix) != "backbone") return;
    for (auto& [name, v] : ps.entries)
      if (is_temporal(name) && seen.insert({cat(prefix, ".", name), 0}).second) {
        probes.push_back({&v, cat(prefix, ".", name), strongest(v)});
        return;
      }
  });

  const double h = 1e-4;
  double worst = 0.0;
  std::string worst_name = "none";
  for (const Probe& p : probes) {
    double an = p.var->has_grad() ? p.var->grad()[p.idx] : 0.0;
    double orig = p.var->val()[p.idx];
    auto eval = [&](double v) {
      p.var->mutable_value()[p.idx] = v;
      ad::NoGrad ng;
      return loss_var().val()[0];
    };
    double fp = eval(orig + h);
    double fm = eval(orig - h);
    p.var->mutable_value()[p.idx] = orig;
    double fd = (fp - fm) / (2.0 * h);
    double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
    if (err > worst) {
      worst = err;
      worst_name = p.name;
    }
  }

  double dt = elapsed(t0);
  report("2 gradient check", probes.size() >= 20 && worst <= 1e-4 && dt < 300.0,
         cat(probes.size(), " params across backbone/appearance/pose, worst rel ", num(worst),
             " (", worst_name, "), ", num(dt), "s"));
}

// ---------------------------------------------------------------- criterion 3

void criterion_zero_init() {
  RunConfig rc = default_config();
  DiffusionModel model =
      DiffusionModel::create(rc.backbone(), kPoseParts, rc.schedule(), 301);
  VideoClip clip = generate_clip(derive_seed(302, "identity", 0), derive_seed(302, "motion", 0),
                                 8, 32, 32);
  Rng r(303);
  ad::NoGrad ng;
  Tensor z = r.normal_tensor({1, 3, 8, 32, 32});
  std::vector<int64_t> ts{57};
  NamedTokens ya = model.encode_reference(clip_ref(clip).reshaped({1, 3, 32, 32}), ts, 304);

  Tensor with_temporal = model.backbone.forward(ad::Var::leaf(z), ts, &ya, nullptr, true).val();
  Tensor without_temporal = model.backbone.forward(ad::Var::leaf(z), ts, &ya, nullptr, false).val();
  bool temporal_neutral = bit_equal(with_temporal, without_temporal);

  NamedResiduals yp =
      model.pose.encode(ad::Var::leaf(z), clip.poses.reshaped({1, 8, kPoseParts, 32, 32}), ts);
  Tensor with_pose = model.backbone.forward(ad::Var::leaf(z), ts, &ya, &yp, true).val();
  bool pose_neutral = bit_equal(with_pose, with_temporal);

  report("3 zero-init neutrality", temporal_neutral && pose_neutral,
         cat("fresh temporal layers bit-neutral: ", temporal_neutral ? "yes" : "no",
             ", untrained pose branch bit-neutral: ", pose_neutral ? "yes" : "no"));
}

// ------------------------------------------------- criteria 4, 5, 6 and pose control

double boundary_stat(const Tensor& v, const std::vector<int64_t>& bounds) {
  int64_t per = v.numel() / v.dim(0);
  double acc = 0.0;
  for (int64_t b : bounds) {
    double d = 0.0;
    for (int64_t i = 0; i < per; ++i) d += std::abs(v[b * per + i] - v[(b - 1) * per + i]);
    acc += d / static_cast<double>(per);
  }
  return acc / static_cast<double>(bounds.size());
}

void criteria_overfit() {
  auto t0 = Clock::now();
  // Strongest measured settings for this scale: beta_end trades the terminal
  // signal/noise mismatch against DDIM x0 amplification and peaks near 0.08;
  // lr 3e-3 is the largest stable step at batch 16.
  RunConfig rc = default_config(
      {"training.lr=0.003", "diffusion.beta_end=0.08", "training.batch_stage1=16"});
  DiffusionModel model = DiffusionModel::create(rc.backbone(), kPoseParts, rc.schedule(),
                                                rc.training_seed, rc.appearance_clean_reference);
  std::vector<VideoClip> clips;
  for (uint64_t i = 0; i < 2; ++i)
    clips.push_back(generate_clip(derive_seed(rc.data_seed, "identity", i),
                                  derive_seed(rc.data_seed, "motion", i), 16, 32, 32));

  TrainConfig tc = rc.train();
  auto before = snapshot(model);
  TrainResult r1 = train_stage1(model, clips, tc);
  auto after_s1 = snapshot(model);
  TrainResult r2 = train_stage2(model, clips, tc);
  auto after_s2 = snapshot(model);
  double train_s = elapsed(t0);

  // criterion 4: the stage boundaries freeze exactly what they promise
  bool s1_temporal_frozen = true;
  bool s2_non_temporal_frozen = true;
  bool s2_temporal_moved = false;
  for (size_t i = 0; i < before.size(); ++i) {
    if (is_temporal(before[i].first)) {
      s1_temporal_frozen &= bit_equal(before[i].second, after_s1[i].second);
      s2_temporal_moved |= !bit_equal(after_s1[i].second, after_s2[i].second);
    } else {
      s2_non_temporal_frozen &= bit_equal(after_s1[i].second, after_s2[i].second);
    }
  }
  report("4 stage isolation", s1_temporal_frozen && s2_non_temporal_frozen && s2_temporal_moved,
         cat("stage 1 left temporal weights untouched: ", s1_temporal_frozen ? "yes" : "no",
             ", stage 2 moved only temporal weights: ",
             (s2_non_temporal_frozen && s2_temporal_moved) ? "yes" : "no"));

  // criterion 5: overfit reconstruction through the sliding-window sampler
  AnimateConfig ac = rc.animation();
  std::vector<Tensor> videos;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const VideoClip& clip : clips) {
    Tensor video = animate_long(model, clip_ref(clip), clip.poses, ac);
    ClipMetrics m = evaluate_clip("clip", video, clip.frames, clip.poses);
    psnr_sum += m.psnr;
    ssim_sum += m.ssim;
    videos.push_back(std::move(video));
  }
  double mean_psnr = psnr_sum / 2.0, mean_ssim = ssim_sum / 2.0;
  double overfit_s = elapsed(t0);
  report("5 overfit reconstruction",
         mean_psnr > 20.0 && mean_ssim > 0.7 && overfit_s < 900.0,
         cat("stage1 loss ", num(r1.rows.front().loss), " -> ", num(r1.mean_loss(180, 20)),
             ", stage2 loss ", num(r2.rows.front().loss), " -> ", num(r2.mean_loss(280, 20)),
             ", mean PSNR ", num(mean_psnr, 4), " dB, mean SSIM ", num(mean_ssim), ", train ",
             num(train_s, 3), "s, total ", num(overfit_s, 3), "s"));

  // criterion 6: directional ablations, majority over three seeds
  int flicker_wins = 0, fusion_wins = 0, noise_wins = 0;
  Tensor ref0 = clip_ref(clips[0]);
  std::vector<Tensor> shared_videos;  // temporal on, shared noise, per seed
  for (uint64_t seed = 0; seed < 3; ++seed) {
    AnimateConfig cfg = ac;
    cfg.seed = seed;
    Tensor with_temporal = seed == 0 ? videos[0] : animate_long(model, ref0, clips[0].poses, cfg);

    AnimateConfig no_t = cfg;
    no_t.temporal = false;
    Tensor without_temporal = animate_long(model, ref0, clips[0].poses, no_t);
    if (flicker(with_temporal) <= flicker(without_temporal)) ++flicker_wins;

    // independent segments: each half denoised alone, no overlap, no fusion
    Tensor independent({16, 3, 32, 32});
    for (int64_t blk = 0; blk < 2; ++blk) {
      Tensor part = animate_long(model, ref0, detail::rows_window(clips[0].poses, blk * 8, 8), cfg);
      std::copy(part.data(), part.data() + part.numel(),
                independent.data() + blk * part.numel());
    }
    if (boundary_stat(with_temporal, {8}) <= boundary_stat(independent, {8})) ++fusion_wins;

    AnimateConfig part_cfg = cfg;
    part_cfg.noise_mode = NoiseMode::Partitioned;
    Tensor partitioned = animate_long(model, ref0, clips[0].poses, part_cfg);
    if (boundary_stat(with_temporal, {4, 8}) <= boundary_stat(partitioned, {4, 8})) ++noise_wins;

    shared_videos.push_back(std::move(with_temporal));
  }
  report("6 directional ablations", flicker_wins >= 2 && fusion_wins >= 2 && noise_wins >= 2,
         cat("temporal attention lowers flicker ", flicker_wins,
             "/3, fusion smooths boundaries ", fusion_wins, "/3, shared noise smooths boundaries ",
             noise_wins, "/3"));

  // conditioning invariant: swapping pose tracks changes the motion more than
  // resampling the noise does
  Tensor swapped = animate_long(model, ref0, clips[1].poses, ac);
  double swap_l1 = l1(shared_videos[0], swapped);
  double seed_l1 = l1(shared_videos[0], shared_videos[1]);
  report("pose controllability", swap_l1 > seed_l1,
         cat("pose-swap L1 ", num(swap_l1), " vs same-pose reseed L1 ", num(seed_l1)));
}

// ---------------------------------------------------------------- criterion 7

void criterion_sampler_stats() {
  const int64_t n = 10000;
  const double tau1 = 0.1, tau2 = 0.3;
  Rng r(701);
  int64_t counts[3] = {0, 0, 0};
  for (int64_t i = 0; i < n; ++i) {
    TrainingCase c = select_training_case(r.uniform(), 2, 0.3, tau1, tau2);
    ++counts[static_cast<int>(c)];
  }
  double p[3] = {tau1, tau2 - tau1, 1.0 - tau2};
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 3; ++i) {
    double mean = n * p[i];
    double sigma = std::sqrt(n * p[i] * (1.0 - p[i]));
    double dev = std::abs(static_cast<double>(counts[i]) - mean) / sigma;
    ok &= dev <= 4.0;
    detail += cat(training_case_name(static_cast<TrainingCase>(i)), " ", counts[i], " (",
                  num(dev, 2), " sigma)", i < 2 ? ", " : "");
  }
  report("7 sampler statistics", ok, detail);
}

// ---------------------------------------------------------------- criterion 8

int run_cli(const std::string& args, const fs::path& cwd, const fs::path& log) {
  std::string cmd = cat("cd ", cwd.string(), " && ANIMLAB_RUN_DIR=. ", ANIMLAB_CLI_PATH, " ", args,
                        " >>", log.string(), " 2>&1");
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

bool run_pipeline(const fs::path& dir, const fs::path& log) {
  // everything addressed relative to `dir`, so the two trees are comparable
  const std::string tiny =
      "--set model.height=16 --set model.width=16"
      " --set model.base_channels=8 --set model.channel_multipliers=1,2"
      " --set model.attention_resolutions=8 --set model.temporal_pe_max_len=4"
      " --set diffusion.T=10 --set diffusion.sample_steps=3"
      " --set training.K=4 --set training.stage1_steps=4 --set training.stage2_steps=4"
      " --set training.batch_stage1=2"
      " --set fusion.K=4 --set fusion.s=2"
      " --set data.identities=1 --set data.motions=1"
      " --set data.holdout_identities=0 --set data.holdout_motions=0"
      " --set data.frames=6 --set data.height=16 --set data.width=16";
  if (run_cli(cat("gen-data ", tiny, " --out corpus"), dir, log) != 0) return false;
  if (run_cli(cat("train-stage1 ", tiny, " --data corpus/train --out s1"), dir, log) != 0)
    return false;
  if (run_cli(cat("train-stage2 ", tiny, " --data corpus/train --init s1/checkpoint --out s2"),
              dir, log) != 0)
    return false;
  if (run_cli(cat("animate ", tiny,
                  " --checkpoint s2/checkpoint --clip corpus/train/clip_0000 --out anim"),
              dir, log) != 0)
    return false;
  if (run_cli("eval --generated anim/video --truth corpus/train/clip_0000 --out scores", dir,
              log) != 0)
    return false;
  return true;
}

bool trees_identical(const fs::path& a, const fs::path& b, std::string& why) {
  auto files = [](const fs::path& root) {
    std::set<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) out.insert(fs::relative(e.path(), root));
    return out;
  };
  std::set<fs::path> fa = files(a), fb = files(b);
  if (fa != fb) {
    why = "file lists differ";
    return false;
  }
  for (const fs::path& rel : fa) {
    std::ifstream ia(a / rel, std::ios::binary), ib(b / rel, std::ios::binary);
    std::ostringstream sa, sb;
    sa << ia.rdbuf();
    sb << ib.rdbuf();
    if (sa.str() != sb.str()) {
      why = cat(rel.string(), " differs");
      return false;
    }
  }
  return true;
}

void criterion_determinism() {
  auto t0 = Clock::now();
  fs::path root = fs::temp_directory_path() / "animlab_acceptance_dtm";
  fs::remove_all(root);
  fs::create_directories(root / "a");
  fs::create_directories(root / "b");
  fs::path log = root / "cli.log";

  bool ran = run_pipeline(root / "a", log) && run_pipeline(root / "b", log);
  std::string why = ran ? "" : "a pipeline command failed";
  bool same = ran && trees_identical(root / "a", root / "b", why);
  report("8 pipeline determinism", same,
         same ? cat("two gen-data/train/animate/eval runs produced byte-identical trees "
                    "(checkpoints, videos, reports), ",
                    num(elapsed(t0), 3), "s, single-threaded")
              : why);
}

}  // namespace

int main() {
  criterion_oracles();
  criterion_gradcheck();
  criterion_zero_init();
  criteria_overfit();
  criterion_sampler_stats();
  criterion_determinism();
  return g_failures == 0 ? 0 : 1;
}
