#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "animlab/common.hpp"
#include "animlab/pipeline.hpp"

namespace animlab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; this port needs byte swapping");

// A checkpoint is a directory of shape-prefixed f64 blobs (one per named
// parameter, prefixed by its store) plus a plain-text manifest.
struct CheckpointManifest {
  std::string config_hash;
  int stage = 0;
  int64_t steps = 0;
  uint64_t seed = 0;
  std::map<std::string, std::string> extra;
};

namespace detail {

constexpr char kBlobMagic[8] = {'a', 'n', 'i', 'm', 'b', 'l', 'b', '1'};

inline void write_blob(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  ANIMLAB_REQUIRE(out.good(), "cannot open ", path.string(), " for writing");
  out.write(kBlobMagic, sizeof(kBlobMagic));
  uint32_t nd = static_cast<uint32_t>(t.shape().size());
  out.write(reinterpret_cast<const char*>(&nd), sizeof(nd));
  for (int64_t d : t.shape()) out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  ANIMLAB_REQUIRE(out.good(), "short write to ", path.string());
}

inline Tensor read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw CheckpointCorruptError(cat("cannot open blob ", path.string()));
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0)
    throw CheckpointCorruptError(cat("bad magic in ", path.string()));
  uint32_t nd = 0;
  in.read(reinterpret_cast<char*>(&nd), sizeof(nd));
  if (!in.good() || nd == 0 || nd > 8)
    throw CheckpointCorruptError(cat("bad rank in ", path.string()));
  Shape shape(nd);
  for (uint32_t i = 0; i < nd; ++i) {
    in.read(reinterpret_cast<char*>(&shape[i]), sizeof(int64_t));
    if (!in.good() || shape[i] <= 0 || shape[i] > (int64_t(1) << 32))
      throw CheckpointCorruptError(cat("bad dimension in ", path.string()));
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(t.numel() * sizeof(double)))
    throw CheckpointCorruptError(cat("truncated blob ", path.string()));
  return t;
}

inline void for_each_store(const DiffusionModel& m,
                           const std::function<void(const char*, const ParamStore&)>& fn) {
  fn("backbone", m.backbone.params);
  fn("appearance", m.appearance.params);
  fn("pose", m.pose.params);
}

inline void for_each_store(DiffusionModel& m,
                           const std::function<void(const char*, ParamStore&)>& fn) {
  fn("backbone", m.backbone.params);
  fn("appearance", m.appearance.params);
  fn("pose", m.pose.params);
}

}  // namespace detail

inline void save_manifest(const std::filesystem::path& path, const CheckpointManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  ANIMLAB_REQUIRE(out.good(), "cannot write manifest ", path.string());
  out << "config_hash=" << m.config_hash << "\n";
  out << "stage=" << m.stage << "\n";
  out << "steps=" << m.steps << "\n";
  out << "seed=" << m.seed << "\n";
  for (const auto& [k, v] : m.extra) out << k << "=" << v << "\n";
  ANIMLAB_REQUIRE(out.good(), "short manifest write to ", path.string());
}

inline CheckpointManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw CheckpointCorruptError(cat("missing manifest ", path.string()));
  CheckpointManifest m;
  std::string line;
  bool saw_hash = false, saw_stage = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw CheckpointCorruptError(cat("malformed manifest line: ", line));
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "config_hash") {
        m.config_hash = val;
        saw_hash = true;
      } else if (key == "stage") {
        m.stage = std::stoi(val);
        saw_stage = true;
      } else if (key == "steps") {
        m.steps = std::stoll(val);
      } else if (key == "seed") {
        m.seed = std::stoull(val);
      } else {
        m.extra[key] = val;
      }
    } catch (const std::exception&) {
      throw CheckpointCorruptError(cat("malformed manifest value: ", line));
    }
  }
  if (!saw_hash || !saw_stage)
    throw CheckpointCorruptError(cat("manifest ", path.string(), " misses required fields"));
  return m;
}

inline void save_checkpoint(const std::filesystem::path& dir, const DiffusionModel& model,
                            const CheckpointManifest& manifest) {
  std::filesystem::create_directories(dir);
  detail::for_each_store(model, [&](const char* prefix, const ParamStore& ps) {
    for (const auto& [name, v] : ps.entries)
      detail::write_blob(dir / (std::string(prefix) + "." + name + ".bin"), v.val());
  });
  save_manifest(dir / "manifest.txt", manifest);
}

// Reads every blob first, then assigns, so a bad checkpoint never leaves the
// model half-loaded. `expect_config_hash` empty skips the hash comparison.
inline CheckpointManifest load_checkpoint(const std::filesystem::path& dir, DiffusionModel& model,
                                          const std::string& expect_config_hash = {},
                                          bool allow_hash_mismatch = false) {
  CheckpointManifest manifest = load_manifest(dir / "manifest.txt");
  if (!expect_config_hash.empty() && manifest.config_hash != expect_config_hash &&
      !allow_hash_mismatch)
    throw CheckpointHashMismatchError(cat("checkpoint was trained under config ",
                                          manifest.config_hash, ", expected ", expect_config_hash));

  std::vector<std::pair<ad::Var*, Tensor>> staged;
  std::string problems;
  detail::for_each_store(model, [&](const char* prefix, ParamStore& ps) {
    for (auto& [name, v] : ps.entries) {
      std::filesystem::path path = dir / (std::string(prefix) + "." + name + ".bin");
      if (!std::filesystem::exists(path)) {
        problems += cat("\n  missing ", prefix, ".", name);
        continue;
      }
      Tensor t = detail::read_blob(path);
      if (t.shape() != v.shape()) {
        problems += cat("\n  ", prefix, ".", name, ": checkpoint ", shape_str(t.shape()),
                        " vs model ", shape_str(v.shape()));
        continue;
      }
      staged.emplace_back(&v, std::move(t));
    }
  });
  if (!problems.empty())
    throw ConfigError(cat("checkpoint ", dir.string(), " does not fit the model:", problems));
  for (auto& [v, t] : staged) v->mutable_value() = std::move(t);
  return manifest;
}

}  // namespace animlab
