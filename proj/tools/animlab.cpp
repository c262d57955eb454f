// animlab: synthetic-clip generation, two-stage training, long-video
// animation, window planning, and evaluation behind one binary.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "animlab/checkpoint.hpp"
#include "animlab/config.hpp"
#include "animlab/image_io.hpp"
#include "animlab/metrics.hpp"
#include "animlab/run.hpp"
#include "animlab/synthdata.hpp"

namespace {

using namespace animlab;
namespace fs = std::filesystem;

struct CliArgs {
  std::string command;
  std::map<std::string, std::string> opt;  // --name value
  std::vector<std::string> sets;           // --set section.key=value, in order
  bool allow_hash_mismatch = false;
};

void usage(std::ostream& out) {
  out << "usage: animlab <command> [options]\n"
         "\n"
         "commands:\n"
         "  gen-data       render a synthetic train + holdout corpus\n"
         "  train-stage1   train the image conditioning (reference + pose) stage\n"
         "  train-stage2   train the temporal layers on top of a stage-1 checkpoint\n"
         "  animate        drive a reference frame along a pose sequence\n"
         "  plan-segments  show the sliding-window plan for an N-frame clip\n"
         "  eval           score generated frames against a ground-truth clip\n"
         "\n"
         "common options:\n"
         "  --config <file>           config file; defaults apply when omitted\n"
         "  --set section.key=value   override one entry (repeatable)\n"
         "  --out <dir>               output directory; default is a fresh dir\n"
         "                            under $ANIMLAB_RUN_DIR (fallback ./runs)\n"
         "\n"
         "command options:\n"
         "  train-stage1   --data <corpus dir>\n"
         "  train-stage2   --data <corpus dir> --init <stage-1 checkpoint>\n"
         "                 [--allow-hash-mismatch]\n"
         "  animate        --checkpoint <dir> --clip <clip dir> [--frames N]\n"
         "                 [--allow-hash-mismatch]\n"
         "  plan-segments  --N <frames> [--K <window>] [--s <stride>]\n"
         "  eval           --generated <frames dir> --truth <clip dir>\n";
}

CliArgs parse_cli(int argc, char** argv) {
  CliArgs args;
  args.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--allow-hash-mismatch") {
      args.allow_hash_mismatch = true;
    } else if (a == "--set") {
      if (i + 1 >= argc) throw ConfigError("--set needs a section.key=value argument");
      args.sets.emplace_back(argv[++i]);
    } else if (a.rfind("--", 0) == 0) {
      if (i + 1 >= argc) throw ConfigError(cat(a, " needs an argument"));
      args.opt[a] = argv[++i];
    } else {
      throw ConfigError(cat("unexpected argument '", a, "'"));
    }
  }
  return args;
}

std::string get_opt(const CliArgs& args, const std::string& name) {
  auto it = args.opt.find(name);
  return it == args.opt.end() ? std::string() : it->second;
}

std::string require_opt(const CliArgs& args, const std::string& name) {
  std::string v = get_opt(args, name);
  if (v.empty()) throw ConfigError(cat(args.command, " requires ", name, " <value>"));
  return v;
}

RunConfig load_config(const CliArgs& args) {
  std::string path = get_opt(args, "--config");
  return path.empty() ? default_config(args.sets) : parse_config(path, args.sets);
}

// first N rows of an [N, ...] tensor
Tensor rows_prefix(const Tensor& t, int64_t n) {
  Shape s = t.shape();
  int64_t per = t.numel() / s[0];
  s[0] = n;
  Tensor out(s);
  std::copy(t.data(), t.data() + n * per, out.data());
  return out;
}

int cmd_gen_data(const CliArgs& args) {
  RunConfig cfg = load_config(args);
  fs::path out = resolve_out_dir("gen-data", get_opt(args, "--out"));

  auto render = [&](int64_t id_index, int64_t motion_index) {
    return generate_clip(derive_seed(cfg.data_seed, "identity", static_cast<uint64_t>(id_index)),
                         derive_seed(cfg.data_seed, "motion", static_cast<uint64_t>(motion_index)),
                         cfg.data_frames, cfg.data_height, cfg.data_width);
  };

  std::vector<VideoClip> train;
  for (int64_t i = 0; i < cfg.data_identities; ++i)
    for (int64_t j = 0; j < cfg.data_motions; ++j) train.push_back(render(i, j));
  // holdout pairs an unseen identity with an unseen motion
  std::vector<VideoClip> holdout;
  for (int64_t i = 0; i < cfg.data_holdout_identities; ++i)
    for (int64_t j = 0; j < cfg.data_holdout_motions; ++j)
      holdout.push_back(render(cfg.data_identities + i, cfg.data_motions + j));

  save_corpus(out / "train", train);
  save_corpus(out / "holdout", holdout);
  write_resolved_config(out, cfg);
  std::cout << "wrote " << train.size() << " train and " << holdout.size()
            << " holdout clips under " << out.string() << "\n";
  return 0;
}

int cmd_train_stage1(const CliArgs& args) {
  RunConfig cfg = load_config(args);
  std::vector<VideoClip> clips = load_corpus(require_opt(args, "--data"));
  ANIMLAB_REQUIRE(!clips.empty(), "training corpus is empty");
  fs::path out = resolve_out_dir("train-stage1", get_opt(args, "--out"));

  DiffusionModel model =
      DiffusionModel::create(cfg.backbone(), clips.front().poses.dim(1), cfg.schedule(),
                             cfg.training_seed, cfg.appearance_clean_reference);
  TrainConfig tc = cfg.train();
  TrainResult result = train_stage1(model, clips, tc);

  CheckpointManifest man;
  man.config_hash = config_hash(cfg);
  man.stage = 1;
  man.steps = tc.stage1_steps;
  man.seed = tc.seed;
  save_checkpoint(out / "checkpoint", model, man);
  write_loss_csv(out / "loss.csv", result);
  write_resolved_config(out, cfg);

  if (!result.rows.empty())
    std::cout << "stage 1: " << result.rows.size() << " steps, last loss "
              << result.rows.back().loss << "\n";
  std::cout << "checkpoint: " << (out / "checkpoint").string() << "\n";
  return 0;
}

int cmd_train_stage2(const CliArgs& args) {
  RunConfig cfg = load_config(args);
  std::vector<VideoClip> clips = load_corpus(require_opt(args, "--data"));
  ANIMLAB_REQUIRE(!clips.empty(), "training corpus is empty");
  std::string init = require_opt(args, "--init");
  fs::path out = resolve_out_dir("train-stage2", get_opt(args, "--out"));

  DiffusionModel model =
      DiffusionModel::create(cfg.backbone(), clips.front().poses.dim(1), cfg.schedule(),
                             cfg.training_seed, cfg.appearance_clean_reference);
  CheckpointManifest init_man =
      load_checkpoint(init, model, config_hash(cfg), args.allow_hash_mismatch);
  ANIMLAB_REQUIRE(init_man.stage == 1, "--init expects a stage-1 checkpoint, got stage ",
                  init_man.stage);

  TrainConfig tc = cfg.train();
  TrainResult result = train_stage2(model, clips, tc);

  CheckpointManifest man;
  man.config_hash = config_hash(cfg);
  man.stage = 2;
  man.steps = tc.stage2_steps;
  man.seed = tc.seed;
  man.extra["init"] = init;
  save_checkpoint(out / "checkpoint", model, man);
  write_loss_csv(out / "loss.csv", result);
  write_resolved_config(out, cfg);

  if (!result.rows.empty())
    std::cout << "stage 2: " << result.rows.size() << " steps, last loss "
              << result.rows.back().loss << "\n";
  std::cout << "checkpoint: " << (out / "checkpoint").string() << "\n";
  return 0;
}

int cmd_animate(const CliArgs& args) {
  RunConfig cfg = load_config(args);
  fs::path ckpt(require_opt(args, "--checkpoint"));
  if (!fs::exists(ckpt / "manifest.txt"))
    throw ConfigError(cat("checkpoint not found: ", ckpt.string()));
  VideoClip clip = load_clip(require_opt(args, "--clip"));

  int64_t n = clip.frames.dim(0);
  std::string frames_opt = get_opt(args, "--frames");
  if (!frames_opt.empty()) {
    int64_t want = detail::parse_int("--frames", frames_opt);
    ANIMLAB_REQUIRE(want >= 1 && want <= n, "--frames must lie in [1, ", n, "], got ", want);
    n = want;
  }

  DiffusionModel model = DiffusionModel::create(cfg.backbone(), clip.poses.dim(1), cfg.schedule(),
                                                cfg.training_seed, cfg.appearance_clean_reference);
  CheckpointManifest man = load_checkpoint(ckpt, model, config_hash(cfg), args.allow_hash_mismatch);

  Tensor ref = rows_prefix(clip.frames, 1)
                   .reshaped({clip.frames.dim(1), clip.frames.dim(2), clip.frames.dim(3)});
  Tensor poses = rows_prefix(clip.poses, n);

  fs::path out = resolve_out_dir("animate", get_opt(args, "--out"));
  Tensor video = animate_long(model, ref, poses, cfg.animation());
  save_frames(out / "video", video);
  write_kv_manifest(out / "manifest.txt",
                    {{"frames", std::to_string(n)},
                     {"height", std::to_string(video.dim(2))},
                     {"width", std::to_string(video.dim(3))},
                     {"sampler", cfg.diffusion_sampler == SamplerKind::DDIM ? "ddim" : "ddpm"},
                     {"sample_steps", std::to_string(cfg.diffusion_sample_steps)},
                     {"noise_mode", noise_mode_name(cfg.fusion_noise_mode)},
                     {"seed", std::to_string(cfg.fusion_seed)},
                     {"checkpoint", ckpt.string()},
                     {"checkpoint_stage", std::to_string(man.stage)},
                     {"config_hash", config_hash(cfg)},
                     {"clip", get_opt(args, "--clip")}});
  write_resolved_config(out, cfg);
  std::cout << "wrote " << n << " frames to " << (out / "video").string() << "\n";
  return 0;
}

int cmd_plan_segments(const CliArgs& args) {
  RunConfig cfg = load_config(args);
  int64_t n = detail::parse_int("--N", require_opt(args, "--N"));
  std::string kopt = get_opt(args, "--K"), sopt = get_opt(args, "--s");
  int64_t k = kopt.empty() ? cfg.fusion_K : detail::parse_int("--K", kopt);
  int64_t s = sopt.empty() ? cfg.fusion_s : detail::parse_int("--s", sopt);

  SegmentPlan plan = plan_segments(n, k, s);
  std::cout << "N=" << n << " K=" << k << " s=" << s << "\n";
  std::cout << "n=" << plan.extra << "\n";
  std::string starts;
  for (size_t i = 0; i < plan.starts.size(); ++i)
    starts += (i ? "," : "") + std::to_string(plan.starts[i]);
  std::cout << "starts=[" << starts << "]\n";
  std::cout << "pad=" << plan.pad_len << "\n";
  std::cout << "windows=" << plan.windows() << "\n";
  return 0;
}

int cmd_eval(const CliArgs& args) {
  RunConfig cfg = load_config(args);
  (void)cfg;  // eval is config-independent, but --set typos should still fail loudly
  fs::path gen_dir(require_opt(args, "--generated"));
  VideoClip truth = load_clip(require_opt(args, "--truth"));

  int64_t n = 0;
  while (fs::exists(gen_dir / detail::frame_name(n))) ++n;
  ANIMLAB_REQUIRE(n >= 1, "no frame_0000.ppm under ", gen_dir.string());
  ANIMLAB_REQUIRE(n <= truth.frames.dim(0), "generated clip has ", n,
                  " frames but the ground truth only ", truth.frames.dim(0));

  Tensor generated = load_frames(gen_dir, n);
  fs::path name_src = gen_dir.filename().empty() ? gen_dir.parent_path() : gen_dir;
  MetricReport report;
  report.clips.push_back(evaluate_clip(name_src.filename().string(), generated,
                                       rows_prefix(truth.frames, n), rows_prefix(truth.poses, n)));

  fs::path out = resolve_out_dir("eval", get_opt(args, "--out"));
  write_report_csv(out / "report.csv", report);
  std::cout << format_report(report);
  std::cout << "report: " << (out / "report.csv").string() << "\n";
  return 0;
}

int run(int argc, char** argv) {
  if (argc < 2) {
    usage(std::cerr);
    return 2;
  }
  std::string cmd = argv[1];
  if (cmd == "help" || cmd == "--help" || cmd == "-h") {
    usage(std::cout);
    return 0;
  }
  CliArgs args = parse_cli(argc, argv);
  if (cmd == "gen-data") return cmd_gen_data(args);
  if (cmd == "train-stage1") return cmd_train_stage1(args);
  if (cmd == "train-stage2") return cmd_train_stage2(args);
  if (cmd == "animate") return cmd_animate(args);
  if (cmd == "plan-segments") return cmd_plan_segments(args);
  if (cmd == "eval") return cmd_eval(args);
  std::cerr << "unknown command '" << cmd << "'\n";
  usage(std::cerr);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
