#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "animlab/animate.hpp"
#include "animlab/pipeline.hpp"
#include "animlab/trainer.hpp"

namespace animlab {

// Run configuration: plain-text `section.key = value` lines merged over
// defaults, then validated as a whole. Every key is declared here; anything
// else is rejected by name.
struct RunConfig {
  // model
  int64_t model_height = 32, model_width = 32;
  int64_t model_base_channels = 32;
  std::vector<int64_t> model_channel_multipliers{1, 2};
  int64_t model_num_res_blocks = 1;
  std::vector<int64_t> model_attention_resolutions{16};
  int64_t model_temporal_pe_max_len = 32;
  // appearance
  bool appearance_clean_reference = false;
  // diffusion
  int64_t diffusion_T = 100;
  double diffusion_beta_start = 1e-4, diffusion_beta_end = 0.02;
  SamplerKind diffusion_sampler = SamplerKind::DDIM;
  int64_t diffusion_sample_steps = 25;
  // training
  double training_tau0 = 0.3, training_tau1 = 0.1, training_tau2 = 0.3;
  int64_t training_K = 8;
  int64_t training_stage1_steps = 200, training_stage2_steps = 300;
  int64_t training_batch_stage1 = 4;
  double training_lr = 1e-4;
  uint64_t training_seed = 7;
  bool training_stage1_train_backbone = true;
  // fusion
  int64_t fusion_K = 8, fusion_s = 4;
  NoiseMode fusion_noise_mode = NoiseMode::Shared;
  bool fusion_drop_pad = false;
  uint64_t fusion_seed = 0;
  // data
  int64_t data_identities = 8, data_motions = 4;
  int64_t data_holdout_identities = 2, data_holdout_motions = 2;
  int64_t data_frames = 16;
  int64_t data_height = 32, data_width = 32;
  uint64_t data_seed = 1;

  BackboneConfig backbone() const {
    BackboneConfig c;
    c.in_channels = 3;
    c.height = model_height;
    c.width = model_width;
    c.base_channels = model_base_channels;
    c.channel_multipliers = model_channel_multipliers;
    c.num_res_blocks = model_num_res_blocks;
    c.attention_resolutions = model_attention_resolutions;
    c.temporal_pe_max_len = model_temporal_pe_max_len;
    return c;
  }

  NoiseSchedule schedule() const {
    return make_noise_schedule(diffusion_T, diffusion_beta_start, diffusion_beta_end);
  }

  TrainConfig train() const {
    TrainConfig t;
    t.tau0 = training_tau0;
    t.tau1 = training_tau1;
    t.tau2 = training_tau2;
    t.clip_frames = training_K;
    t.stage1_steps = training_stage1_steps;
    t.stage2_steps = training_stage2_steps;
    t.batch_stage1 = training_batch_stage1;
    t.lr = training_lr;
    t.seed = training_seed;
    t.stage1_train_backbone = training_stage1_train_backbone;
    return t;
  }

  AnimateConfig animation() const {
    AnimateConfig a;
    a.window = fusion_K;
    a.stride = fusion_s;
    a.sampler = diffusion_sampler;
    a.sample_steps = diffusion_sample_steps;
    a.noise_mode = fusion_noise_mode;
    a.drop_pad = fusion_drop_pad;
    a.seed = fusion_seed;
    return a;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(cat(key, ": expected an integer, got '", v, "'"));
  }
}

inline uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(cat(key, ": expected a nonnegative integer, got '", v, "'"));
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(cat(key, ": expected a number, got '", v, "'"));
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(cat(key, ": expected a boolean, got '", v, "'"));
}

inline std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int64_t> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ConfigError(cat(key, ": expected a comma-separated integer list"));
  return out;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_int_list(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "model.height") c.model_height = parse_int(key, value);
  else if (key == "model.width") c.model_width = parse_int(key, value);
  else if (key == "model.base_channels") c.model_base_channels = parse_int(key, value);
  else if (key == "model.channel_multipliers") c.model_channel_multipliers = parse_int_list(key, value);
  else if (key == "model.num_res_blocks") c.model_num_res_blocks = parse_int(key, value);
  else if (key == "model.attention_resolutions") c.model_attention_resolutions = parse_int_list(key, value);
  else if (key == "model.temporal_pe_max_len") c.model_temporal_pe_max_len = parse_int(key, value);
  else if (key == "appearance.clean_reference") c.appearance_clean_reference = parse_bool(key, value);
  else if (key == "diffusion.T") c.diffusion_T = parse_int(key, value);
  else if (key == "diffusion.beta_start") c.diffusion_beta_start = parse_double(key, value);
  else if (key == "diffusion.beta_end") c.diffusion_beta_end = parse_double(key, value);
  else if (key == "diffusion.sampler") {
    if (value == "ddim") c.diffusion_sampler = SamplerKind::DDIM;
    else if (value == "ddpm") c.diffusion_sampler = SamplerKind::DDPM;
    else throw ConfigError(cat(key, ": expected ddim or ddpm, got '", value, "'"));
  } else if (key == "diffusion.sample_steps") c.diffusion_sample_steps = parse_int(key, value);
  else if (key == "training.tau0") c.training_tau0 = parse_double(key, value);
  else if (key == "training.tau1") c.training_tau1 = parse_double(key, value);
  else if (key == "training.tau2") c.training_tau2 = parse_double(key, value);
  else if (key == "training.K") c.training_K = parse_int(key, value);
  else if (key == "training.stage1_steps") c.training_stage1_steps = parse_int(key, value);
  else if (key == "training.stage2_steps") c.training_stage2_steps = parse_int(key, value);
  else if (key == "training.batch_stage1") c.training_batch_stage1 = parse_int(key, value);
  else if (key == "training.lr") c.training_lr = parse_double(key, value);
  else if (key == "training.seed") c.training_seed = parse_uint(key, value);
  else if (key == "training.stage1_train_backbone") c.training_stage1_train_backbone = parse_bool(key, value);
  else if (key == "fusion.K") c.fusion_K = parse_int(key, value);
  else if (key == "fusion.s") c.fusion_s = parse_int(key, value);
  else if (key == "fusion.noise_mode") {
    if (value == "shared") c.fusion_noise_mode = NoiseMode::Shared;
    else if (value == "partitioned") c.fusion_noise_mode = NoiseMode::Partitioned;
    else throw ConfigError(cat(key, ": expected shared or partitioned, got '", value, "'"));
  } else if (key == "fusion.drop_pad") c.fusion_drop_pad = parse_bool(key, value);
  else if (key == "fusion.seed") c.fusion_seed = parse_uint(key, value);
  else if (key == "data.identities") c.data_identities = parse_int(key, value);
  else if (key == "data.motions") c.data_motions = parse_int(key, value);
  else if (key == "data.holdout_identities") c.data_holdout_identities = parse_int(key, value);
  else if (key == "data.holdout_motions") c.data_holdout_motions = parse_int(key, value);
  else if (key == "data.frames") c.data_frames = parse_int(key, value);
  else if (key == "data.height") c.data_height = parse_int(key, value);
  else if (key == "data.width") c.data_width = parse_int(key, value);
  else if (key == "data.seed") c.data_seed = parse_uint(key, value);
  else throw ConfigError(cat("unknown config key '", key, "'"));
}

// Canonical re-serialization: every key, sorted, values normalized. The
// config hash is computed over exactly this map.
inline std::map<std::string, std::string> config_entries(const RunConfig& c) {
  using namespace detail;
  std::map<std::string, std::string> m;
  m["model.height"] = std::to_string(c.model_height);
  m["model.width"] = std::to_string(c.model_width);
  m["model.base_channels"] = std::to_string(c.model_base_channels);
  m["model.channel_multipliers"] = fmt_int_list(c.model_channel_multipliers);
  m["model.num_res_blocks"] = std::to_string(c.model_num_res_blocks);
  m["model.attention_resolutions"] = fmt_int_list(c.model_attention_resolutions);
  m["model.temporal_pe_max_len"] = std::to_string(c.model_temporal_pe_max_len);
  m["appearance.clean_reference"] = c.appearance_clean_reference ? "true" : "false";
  m["diffusion.T"] = std::to_string(c.diffusion_T);
  m["diffusion.beta_start"] = fmt_double(c.diffusion_beta_start);
  m["diffusion.beta_end"] = fmt_double(c.diffusion_beta_end);
  m["diffusion.sampler"] = c.diffusion_sampler == SamplerKind::DDIM ? "ddim" : "ddpm";
  m["diffusion.sample_steps"] = std::to_string(c.diffusion_sample_steps);
  m["training.tau0"] = fmt_double(c.training_tau0);
  m["training.tau1"] = fmt_double(c.training_tau1);
  m["training.tau2"] = fmt_double(c.training_tau2);
  m["training.K"] = std::to_string(c.training_K);
  m["training.stage1_steps"] = std::to_string(c.training_stage1_steps);
  m["training.stage2_steps"] = std::to_string(c.training_stage2_steps);
  m["training.batch_stage1"] = std::to_string(c.training_batch_stage1);
  m["training.lr"] = fmt_double(c.training_lr);
  m["training.seed"] = std::to_string(c.training_seed);
  m["training.stage1_train_backbone"] = c.training_stage1_train_backbone ? "true" : "false";
  m["fusion.K"] = std::to_string(c.fusion_K);
  m["fusion.s"] = std::to_string(c.fusion_s);
  m["fusion.noise_mode"] = noise_mode_name(c.fusion_noise_mode);
  m["fusion.drop_pad"] = c.fusion_drop_pad ? "true" : "false";
  m["fusion.seed"] = std::to_string(c.fusion_seed);
  m["data.identities"] = std::to_string(c.data_identities);
  m["data.motions"] = std::to_string(c.data_motions);
  m["data.holdout_identities"] = std::to_string(c.data_holdout_identities);
  m["data.holdout_motions"] = std::to_string(c.data_holdout_motions);
  m["data.frames"] = std::to_string(c.data_frames);
  m["data.height"] = std::to_string(c.data_height);
  m["data.width"] = std::to_string(c.data_width);
  m["data.seed"] = std::to_string(c.data_seed);
  return m;
}

// FNV-1a over the sorted canonical entries.
inline std::string config_hash(const RunConfig& c) {
  uint64_t h = fnv1a64(std::string("animlab-config"));
  for (const auto& [k, v] : config_entries(c)) h = fnv1a64(cat(k, "=", v, "\n"), h);
  return hex64(h);
}

inline void validate_config(const RunConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(c.model_height >= 16 && c.model_width >= 16, "model.height/width must be >= 16");
  need(c.model_base_channels >= 1, "model.base_channels must be positive");
  need(c.model_num_res_blocks >= 1, "model.num_res_blocks must be positive");
  need(!c.model_channel_multipliers.empty(), "model.channel_multipliers must be nonempty");
  for (int64_t mlt : c.model_channel_multipliers)
    need(mlt >= 1, "model.channel_multipliers entries must be positive");
  need(c.diffusion_T >= 1, "diffusion.T must be positive");
  need(c.diffusion_beta_start > 0 && c.diffusion_beta_end > c.diffusion_beta_start,
       "diffusion betas must satisfy 0 < beta_start < beta_end");
  need(c.diffusion_sample_steps >= 1 && c.diffusion_sample_steps <= c.diffusion_T,
       "diffusion.sample_steps must lie in [1, diffusion.T]");
  need(c.training_tau0 >= 0 && c.training_tau0 <= 1, "training.tau0 must lie in [0, 1]");
  need(c.training_tau1 >= 0 && c.training_tau2 >= c.training_tau1 && c.training_tau2 <= 1,
       "training taus must satisfy 0 <= tau1 <= tau2 <= 1");
  need(c.training_K >= 1, "training.K must be positive");
  need(c.training_stage1_steps >= 0 && c.training_stage2_steps >= 0,
       "training step counts must be nonnegative");
  need(c.training_batch_stage1 >= 1, "training.batch_stage1 must be positive");
  need(c.training_lr > 0, "training.lr must be positive");
  need(c.fusion_K >= 1, "fusion.K must be positive");
  need(c.fusion_s >= 1 && c.fusion_s < c.fusion_K, "s must be < K (and positive)");
  need(c.model_temporal_pe_max_len >= std::max(c.training_K, c.fusion_K),
       "model.temporal_pe_max_len must cover the largest frame window");
  need(c.data_identities >= 1 && c.data_motions >= 1, "data corpus counts must be positive");
  need(c.data_holdout_identities >= 0 && c.data_holdout_motions >= 0,
       "data holdout counts must be nonnegative");
  need(c.data_frames >= 1, "data.frames must be positive");
  need(c.data_height >= 16 && c.data_width >= 16, "data.height/width must be >= 16");
  need(c.data_height == c.model_height && c.data_width == c.model_width,
       "data dimensions must match the model dimensions");
}

// File lines, then overrides, then whole-config validation.
inline RunConfig parse_config(const std::filesystem::path& path,
                              const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  std::ifstream in(path);
  if (!in.good()) throw ConfigError(cat("cannot open config file ", path.string()));
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = line.substr(0, line.find('#'));
    body = detail::trim(body);
    if (body.empty()) continue;
    size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(cat(path.string(), ":", lineno, ": expected 'section.key = value'"));
    apply_config_entry(c, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
  }
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError(cat("override '", ov, "' must look like section.key=value"));
    apply_config_entry(c, detail::trim(ov.substr(0, eq)), detail::trim(ov.substr(eq + 1)));
  }
  validate_config(c);
  return c;
}

inline RunConfig default_config(const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError(cat("override '", ov, "' must look like section.key=value"));
    apply_config_entry(c, detail::trim(ov.substr(0, eq)), detail::trim(ov.substr(eq + 1)));
  }
  validate_config(c);
  return c;
}

}  // namespace animlab
