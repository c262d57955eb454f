#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "animlab/tensor.hpp"

namespace animlab {

namespace detail {

inline void require_same_video(const Tensor& a, const Tensor& b) {
  ANIMLAB_REQUIRE(a.shape().size() == 4 && b.shape().size() == 4, "metrics want [N, C, H, W]");
  for (int i = 0; i < 4; ++i)
    ANIMLAB_REQUIRE(a.dim(i) == b.dim(i), "video shapes differ at axis ", i, ": ", a.dim(i),
                    " vs ", b.dim(i));
}

}  // namespace detail

// Mean absolute difference over every element.
inline double l1(const Tensor& a, const Tensor& b) {
  detail::require_same_video(a, b);
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.numel());
}

// Mean absolute difference over the pixels the mask keeps, all channels.
// mask is [N, H, W]; an empty mask yields zero.
inline double l1(const Tensor& a, const Tensor& b, const Tensor& mask) {
  detail::require_same_video(a, b);
  ANIMLAB_REQUIRE(mask.shape().size() == 3 && mask.dim(0) == a.dim(0) &&
                      mask.dim(1) == a.dim(2) && mask.dim(2) == a.dim(3),
                  "mask must be [N, H, W] matching the video");
  int64_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  double acc = 0.0;
  int64_t kept = 0;
  for (int64_t f = 0; f < n; ++f)
    for (int64_t q = 0; q < hw; ++q) {
      if (mask[f * hw + q] == 0.0) continue;
      for (int64_t ch = 0; ch < c; ++ch) {
        int64_t i = (f * c + ch) * hw + q;
        acc += std::abs(a[i] - b[i]);
      }
      kept += c;
    }
  return kept > 0 ? acc / static_cast<double>(kept) : 0.0;
}

// Union of the part channels: 1 where any part claims the pixel.
inline Tensor foreground_mask(const Tensor& poses) {
  ANIMLAB_REQUIRE(poses.shape().size() == 4, "foreground_mask wants [N, P, H, W]");
  int64_t n = poses.dim(0), p = poses.dim(1), hw = poses.dim(2) * poses.dim(3);
  Tensor mask({n, poses.dim(2), poses.dim(3)});
  for (int64_t f = 0; f < n; ++f)
    for (int64_t q = 0; q < hw; ++q)
      for (int64_t ch = 0; ch < p; ++ch)
        if (poses[(f * p + ch) * hw + q] != 0.0) {
          mask[f * hw + q] = 1.0;
          break;
        }
  return mask;
}

// Peak signal-to-noise ratio with pixels rescaled from [-1, 1] to [0, 1],
// peak 1. Identical inputs give +infinity.
inline double psnr(const Tensor& a, const Tensor& b) {
  detail::require_same_video(a, b);
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = (a[i] - b[i]) * 0.5;  // rescale shrinks differences by half
    acc += d * d;
  }
  double mse = acc / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// Standard SSIM: 11x11 Gaussian window (sigma 1.5), k1 = 0.01, k2 = 0.03,
// computed on the [0, 1] rescale over the valid (fully covered) region and
// averaged across positions, channels, and frames.
inline double ssim(const Tensor& a, const Tensor& b) {
  detail::require_same_video(a, b);
  const int64_t win = 11;
  int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  ANIMLAB_REQUIRE(h >= win && w >= win, "ssim needs at least ", win, "x", win,
                  " images, got ", h, "x", w);

  double g[win];
  double gsum = 0.0;
  for (int64_t i = 0; i < win; ++i) {
    double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gsum += g[i];
  }
  for (int64_t i = 0; i < win; ++i) g[i] /= gsum;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int64_t windows = 0;
  for (int64_t f = 0; f < n; ++f)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* pa = a.data() + (f * c + ch) * h * w;
      const double* pb = b.data() + (f * c + ch) * h * w;
      for (int64_t y = 0; y + win <= h; ++y)
        for (int64_t x = 0; x + win <= w; ++x) {
          double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
          for (int64_t dy = 0; dy < win; ++dy)
            for (int64_t dx = 0; dx < win; ++dx) {
              double wgt = g[dy] * g[dx];
              double va = (pa[(y + dy) * w + (x + dx)] + 1.0) * 0.5;
              double vb = (pb[(y + dy) * w + (x + dx)] + 1.0) * 0.5;
              ma += wgt * va;
              mb += wgt * vb;
              maa += wgt * va * va;
              mbb += wgt * vb * vb;
              mab += wgt * (va * vb);  // grouped so the swap is bit-exact
            }
          double var_a = maa - ma * ma, var_b = mbb - mb * mb, cov = mab - ma * mb;
          total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
          ++windows;
        }
    }
  return total / static_cast<double>(windows);
}

// Temporal flicker proxy: mean absolute difference between consecutive
// frames, averaged over the clip.
inline double flicker(const Tensor& video) {
  ANIMLAB_REQUIRE(video.shape().size() == 4, "flicker wants [N, C, H, W]");
  int64_t n = video.dim(0);
  ANIMLAB_REQUIRE(n >= 2, "flicker needs at least two frames, got ", n);
  int64_t per = video.dim(1) * video.dim(2) * video.dim(3);
  double acc = 0.0;
  for (int64_t f = 0; f + 1 < n; ++f) {
    const double* cur = video.data() + f * per;
    const double* nxt = cur + per;
    double d = 0.0;
    for (int64_t i = 0; i < per; ++i) d += std::abs(nxt[i] - cur[i]);
    acc += d / static_cast<double>(per);
  }
  return acc / static_cast<double>(n - 1);
}

struct ClipMetrics {
  std::string name;
  double l1 = 0, l1_fg = 0, psnr = 0, ssim = 0, flicker = 0;
};

inline ClipMetrics evaluate_clip(const std::string& name, const Tensor& generated,
                                 const Tensor& truth, const Tensor& truth_poses) {
  ClipMetrics m;
  m.name = name;
  m.l1 = l1(generated, truth);
  m.l1_fg = l1(generated, truth, foreground_mask(truth_poses));
  m.psnr = psnr(generated, truth);
  m.ssim = ssim(generated, truth);
  m.flicker = generated.dim(0) >= 2 ? flicker(generated) : 0.0;
  return m;
}

struct MetricReport {
  std::vector<ClipMetrics> clips;

  ClipMetrics mean() const {
    ANIMLAB_REQUIRE(!clips.empty(), "cannot average an empty report");
    ClipMetrics m;
    m.name = "mean";
    for (const ClipMetrics& c : clips) {
      m.l1 += c.l1;
      m.l1_fg += c.l1_fg;
      m.psnr += c.psnr;
      m.ssim += c.ssim;
      m.flicker += c.flicker;
    }
    double n = static_cast<double>(clips.size());
    m.l1 /= n;
    m.l1_fg /= n;
    m.psnr /= n;
    m.ssim /= n;
    m.flicker /= n;
    return m;
  }
};

namespace detail {

inline void metric_row(std::ostream& os, const ClipMetrics& m, const char* sep) {
  os << m.name << sep << m.l1 << sep << m.l1_fg << sep << m.psnr << sep << m.ssim << sep
     << m.flicker << "\n";
}

}  // namespace detail

inline void write_report_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  ANIMLAB_REQUIRE(out.good(), "cannot open ", path.string(), " for writing");
  out << std::setprecision(12);
  out << "clip,l1,l1_fg,psnr,ssim,flicker\n";
  for (const ClipMetrics& m : report.clips) detail::metric_row(out, m, ",");
  detail::metric_row(out, report.mean(), ",");
  ANIMLAB_REQUIRE(out.good(), "short write to ", path.string());
}

inline std::string format_report(const MetricReport& report) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << std::left << std::setw(12) << "clip" << std::right << std::setw(10) << "l1"
     << std::setw(10) << "l1_fg" << std::setw(10) << "psnr" << std::setw(10) << "ssim"
     << std::setw(10) << "flicker" << "\n";
  auto row = [&](const ClipMetrics& m) {
    os << std::left << std::setw(12) << m.name << std::right << std::setw(10) << m.l1
       << std::setw(10) << m.l1_fg << std::setw(10) << m.psnr << std::setw(10) << m.ssim
       << std::setw(10) << m.flicker << "\n";
  };
  for (const ClipMetrics& m : report.clips) row(m);
  row(report.mean());
  return os.str();
}

}  // namespace animlab
