#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "animlab/pipeline.hpp"
#include "animlab/synthdata.hpp"

namespace animlab {

// Frames travel as binary PPM (P6), pose maps as binary PGM (P5) holding the
// part index per pixel (0 = background, p + 1 = part p).

inline uint8_t pixel_to_byte(double v) {
  double u = (v + 1.0) * 127.5;
  if (u <= 0.0) return 0;
  if (u >= 255.0) return 255;
  return static_cast<uint8_t>(u + 0.5);
}

inline double byte_to_pixel(uint8_t b) {
  return static_cast<double>(b) / 255.0 * 2.0 - 1.0;
}

namespace detail {

inline void read_pnm_header(std::istream& in, const std::string& magic, int64_t& w,
                            int64_t& h, const std::string& path) {
  std::string tag;
  in >> tag;
  ANIMLAB_REQUIRE(in.good() && tag == magic, path, ": expected ", magic, " header");
  int64_t maxval = 0;
  in >> w >> h >> maxval;
  ANIMLAB_REQUIRE(in.good() && w > 0 && h > 0 && maxval == 255, path,
                  ": unsupported image header");
  in.get();  // single whitespace before the raster
}

}  // namespace detail

inline void write_ppm(const std::filesystem::path& path, const Tensor& frame) {
  ANIMLAB_REQUIRE(frame.shape().size() == 3 && frame.dim(0) == 3,
                  "write_ppm wants [3, H, W]");
  int64_t h = frame.dim(1), w = frame.dim(2);
  std::ofstream out(path, std::ios::binary);
  ANIMLAB_REQUIRE(out.good(), "cannot open ", path.string(), " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[static_cast<size_t>(x * 3 + c)] = pixel_to_byte(frame[(c * h + y) * w + x]);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  ANIMLAB_REQUIRE(out.good(), "short write to ", path.string());
}

inline Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  ANIMLAB_REQUIRE(in.good(), "cannot open image ", path.string());
  int64_t w = 0, h = 0;
  detail::read_pnm_header(in, "P6", w, h, path.string());
  Tensor frame({3, h, w});
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int64_t y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    ANIMLAB_REQUIRE(in.gcount() == static_cast<std::streamsize>(row.size()), path.string(),
                    ": truncated raster");
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        frame[(c * h + y) * w + x] = byte_to_pixel(row[static_cast<size_t>(x * 3 + c)]);
  }
  return frame;
}

inline void write_pgm_pose(const std::filesystem::path& path, const Tensor& pose) {
  ANIMLAB_REQUIRE(pose.shape().size() == 3, "write_pgm_pose wants [P, H, W]");
  int64_t p = pose.dim(0), h = pose.dim(1), w = pose.dim(2);
  ANIMLAB_REQUIRE(p <= 255, "too many part channels: ", p);
  std::ofstream out(path, std::ios::binary);
  ANIMLAB_REQUIRE(out.good(), "cannot open ", path.string(), " for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      uint8_t idx = 0;
      for (int64_t c = 0; c < p; ++c)
        if (pose[(c * h + y) * w + x] != 0.0) {
          idx = static_cast<uint8_t>(c + 1);
          break;
        }
      row[static_cast<size_t>(x)] = idx;
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  ANIMLAB_REQUIRE(out.good(), "short write to ", path.string());
}

inline Tensor read_pgm_pose(const std::filesystem::path& path, int64_t parts) {
  ANIMLAB_REQUIRE(parts >= 1 && parts <= 255, "bad part count: ", parts);
  std::ifstream in(path, std::ios::binary);
  ANIMLAB_REQUIRE(in.good(), "cannot open image ", path.string());
  int64_t w = 0, h = 0;
  detail::read_pnm_header(in, "P5", w, h, path.string());
  Tensor pose({parts, h, w});
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    ANIMLAB_REQUIRE(in.gcount() == static_cast<std::streamsize>(row.size()), path.string(),
                    ": truncated raster");
    for (int64_t x = 0; x < w; ++x) {
      uint8_t idx = row[static_cast<size_t>(x)];
      ANIMLAB_REQUIRE(idx <= parts, path.string(), ": part index ", int64_t(idx),
                      " exceeds declared channel count ", parts);
      if (idx > 0) pose[((idx - 1) * h + y) * w + x] = 1.0;
    }
  }
  return pose;
}

namespace detail {

inline std::string frame_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.ppm", static_cast<int>(i));
  return buf;
}

inline std::string pose_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pose_%04d.pgm", static_cast<int>(i));
  return buf;
}

}  // namespace detail

// Clip directory: numbered frames, numbered pose maps, and a manifest naming
// the seeds and dimensions.
inline void save_clip(const std::filesystem::path& dir, const VideoClip& clip) {
  ANIMLAB_REQUIRE(clip.frames.shape().size() == 4 && clip.poses.shape().size() == 4 &&
                      clip.frames.dim(0) == clip.poses.dim(0),
                  "malformed clip");
  std::filesystem::create_directories(dir);
  int64_t n = clip.frames.dim(0), c = clip.frames.dim(1);
  int64_t p = clip.poses.dim(1), h = clip.frames.dim(2), w = clip.frames.dim(3);
  ANIMLAB_REQUIRE(c == 3, "clip frames must be RGB");
  for (int64_t f = 0; f < n; ++f) {
    Tensor frame({3, h, w}), pose({p, h, w});
    std::copy(clip.frames.data() + f * 3 * h * w, clip.frames.data() + (f + 1) * 3 * h * w,
              frame.data());
    std::copy(clip.poses.data() + f * p * h * w, clip.poses.data() + (f + 1) * p * h * w,
              pose.data());
    write_ppm(dir / detail::frame_name(f), frame);
    write_pgm_pose(dir / detail::pose_name(f), pose);
  }
  std::ofstream out(dir / "clip.txt");
  ANIMLAB_REQUIRE(out.good(), "cannot write clip manifest in ", dir.string());
  out << "identity=" << clip.identity << "\n"
      << "motion=" << clip.motion << "\n"
      << "frames=" << n << "\n"
      << "parts=" << p << "\n"
      << "height=" << h << "\n"
      << "width=" << w << "\n";
  ANIMLAB_REQUIRE(out.good(), "short manifest write in ", dir.string());
}

inline VideoClip load_clip(const std::filesystem::path& dir) {
  std::ifstream in(dir / "clip.txt");
  if (!in.good()) throw ConfigError(cat("no clip manifest in ", dir.string()));
  int64_t n = -1, p = -1, h = -1, w = -1;
  VideoClip clip;
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "identity") clip.identity = std::stoull(val);
      else if (key == "motion") clip.motion = std::stoull(val);
      else if (key == "frames") n = std::stoll(val);
      else if (key == "parts") p = std::stoll(val);
      else if (key == "height") h = std::stoll(val);
      else if (key == "width") w = std::stoll(val);
    } catch (const std::exception&) {
      throw ConfigError(cat("bad clip manifest value for ", key, " in ", dir.string()));
    }
  }
  if (n < 1 || p < 1 || h < 1 || w < 1)
    throw ConfigError(cat("incomplete clip manifest in ", dir.string()));
  clip.frames = Tensor({n, 3, h, w});
  clip.poses = Tensor({n, p, h, w});
  for (int64_t f = 0; f < n; ++f) {
    Tensor frame = read_ppm(dir / detail::frame_name(f));
    ANIMLAB_REQUIRE(frame.dim(1) == h && frame.dim(2) == w, "frame ", f, " in ", dir.string(),
                    " has the wrong size");
    Tensor pose = read_pgm_pose(dir / detail::pose_name(f), p);
    ANIMLAB_REQUIRE(pose.dim(1) == h && pose.dim(2) == w, "pose ", f, " in ", dir.string(),
                    " has the wrong size");
    std::copy(frame.data(), frame.data() + frame.numel(), clip.frames.data() + f * 3 * h * w);
    std::copy(pose.data(), pose.data() + pose.numel(), clip.poses.data() + f * p * h * w);
  }
  return clip;
}

// Corpus directory: clip_0000, clip_0001, ... plus a count manifest.
inline void save_corpus(const std::filesystem::path& dir, const std::vector<VideoClip>& clips) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < clips.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%04d", static_cast<int>(i));
    save_clip(dir / buf, clips[i]);
  }
  std::ofstream out(dir / "corpus.txt");
  ANIMLAB_REQUIRE(out.good(), "cannot write corpus manifest in ", dir.string());
  out << "clips=" << clips.size() << "\n";
}

inline std::vector<VideoClip> load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "corpus.txt");
  if (!in.good()) throw ConfigError(cat("no corpus manifest in ", dir.string()));
  std::string line;
  int64_t count = -1;
  while (std::getline(in, line)) {
    if (line.rfind("clips=", 0) == 0) count = std::stoll(line.substr(6));
  }
  if (count < 0) throw ConfigError(cat("corpus manifest in ", dir.string(), " lacks a clip count"));
  std::vector<VideoClip> clips;
  clips.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%04d", static_cast<int>(i));
    clips.push_back(load_clip(dir / buf));
  }
  return clips;
}

// Bare frame sequence, the animate output format.
inline void save_frames(const std::filesystem::path& dir, const Tensor& frames) {
  ANIMLAB_REQUIRE(frames.shape().size() == 4 && frames.dim(1) == 3,
                  "save_frames wants [N, 3, H, W]");
  std::filesystem::create_directories(dir);
  int64_t n = frames.dim(0), h = frames.dim(2), w = frames.dim(3);
  for (int64_t f = 0; f < n; ++f) {
    Tensor frame({3, h, w});
    std::copy(frames.data() + f * 3 * h * w, frames.data() + (f + 1) * 3 * h * w, frame.data());
    write_ppm(dir / detail::frame_name(f), frame);
  }
}

inline Tensor load_frames(const std::filesystem::path& dir, int64_t n) {
  ANIMLAB_REQUIRE(n >= 1, "need at least one frame");
  Tensor first = read_ppm(dir / detail::frame_name(0));
  int64_t h = first.dim(1), w = first.dim(2);
  Tensor frames({n, 3, h, w});
  std::copy(first.data(), first.data() + first.numel(), frames.data());
  for (int64_t f = 1; f < n; ++f) {
    Tensor frame = read_ppm(dir / detail::frame_name(f));
    ANIMLAB_REQUIRE(frame.dim(1) == h && frame.dim(2) == w, "frame ", f, " in ", dir.string(),
                    " has the wrong size");
    std::copy(frame.data(), frame.data() + frame.numel(), frames.data() + f * 3 * h * w);
  }
  return frames;
}

}  // namespace animlab
