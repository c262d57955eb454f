#pragma once

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>

#include "animlab/config.hpp"
#include "animlab/trainer.hpp"

namespace animlab {

// Output root: ANIMLAB_RUN_DIR when set, ./runs otherwise.
inline std::filesystem::path run_root() {
  const char* env = std::getenv("ANIMLAB_RUN_DIR");
  if (env != nullptr && *env != '\0') return std::filesystem::path(env);
  return std::filesystem::path("runs");
}

// <root>/<command>-YYYYMMDD-HHMMSS, suffixed -1, -2, ... if taken.
inline std::filesystem::path create_run_dir(const std::string& command) {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
#if defined(_WIN32)
  localtime_s(&tm, &now);
#else
  localtime_r(&now, &tm);
#endif
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  std::filesystem::path root = run_root();
  std::filesystem::path dir = root / (command + "-" + stamp);
  for (int k = 1; std::filesystem::exists(dir); ++k)
    dir = root / (command + "-" + std::string(stamp) + "-" + std::to_string(k));
  std::filesystem::create_directories(dir);
  return dir;
}

// --out wins over the timestamped default.
inline std::filesystem::path resolve_out_dir(const std::string& command,
                                             const std::string& out_override) {
  if (!out_override.empty()) {
    std::filesystem::path dir(out_override);
    std::filesystem::create_directories(dir);
    return dir;
  }
  return create_run_dir(command);
}

// The resolved config is itself a parseable config file, so any run can be
// replayed from its own directory.
inline void write_resolved_config(const std::filesystem::path& dir, const RunConfig& cfg) {
  std::ofstream out(dir / "config.txt");
  ANIMLAB_REQUIRE(out.good(), "cannot write resolved config in ", dir.string());
  out << "# resolved configuration, hash " << config_hash(cfg) << "\n";
  for (const auto& [k, v] : config_entries(cfg)) out << k << " = " << v << "\n";
  ANIMLAB_REQUIRE(out.good(), "short config write in ", dir.string());
}

inline void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path);
  ANIMLAB_REQUIRE(out.good(), "cannot write ", path.string());
  out << "step,stage,case,loss\n";
  char buf[40];
  for (const LossRow& row : result.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", row.loss);
    out << row.step << "," << row.stage << "," << training_case_name(row.kase) << "," << buf
        << "\n";
  }
  ANIMLAB_REQUIRE(out.good(), "short write to ", path.string());
}

inline void write_kv_manifest(const std::filesystem::path& path,
                              const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path);
  ANIMLAB_REQUIRE(out.good(), "cannot write ", path.string());
  for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
  ANIMLAB_REQUIRE(out.good(), "short write to ", path.string());
}

}  // namespace animlab
