#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "animlab/attention.hpp"
#include "animlab/ops.hpp"
#include "animlab/pe.hpp"
#include "animlab/random.hpp"

namespace animlab {

inline int64_t norm_groups(int64_t channels) { return std::gcd(channels, int64_t{8}); }

// Ordered, named parameter registry. Creation order is fixed by construction
// so a given seed always produces the same weights.
struct ParamStore {
  std::vector<std::pair<std::string, ad::Var>> entries;

  ad::Var add(const std::string& name, Tensor init) {
    ANIMLAB_REQUIRE(find(name) == nullptr, "duplicate parameter name ", name);
    ad::Var v = ad::Var::leaf(std::move(init), true);
    entries.emplace_back(name, v);
    return v;
  }

  const ad::Var* find(const std::string& name) const {
    for (auto& [n, v] : entries)
      if (n == name) return &v;
    return nullptr;
  }
  ad::Var* find(const std::string& name) {
    for (auto& [n, v] : entries)
      if (n == name) return &v;
    return nullptr;
  }

  size_t size() const { return entries.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (auto& [name, v] : entries) n += v.numel();
    return n;
  }

  void set_requires_grad_all(bool on) {
    for (auto& [name, v] : entries) v.set_requires_grad(on);
  }

  template <class Pred>
  void set_requires_grad_if(Pred pred) {
    for (auto& [name, v] : entries) v.set_requires_grad(pred(name));
  }

  void zero_grads() {
    for (auto& [name, v] : entries) v.zero_grad();
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (auto& [n, v] : entries) out.push_back(n);
    return out;
  }

  // Overwrite values for names present in `src` (used to clone the backbone
  // into the conditioner copies).
  void copy_matching_from(const ParamStore& src,
                          const std::function<std::string(const std::string&)>& map_name) {
    for (auto& [name, v] : entries) {
      const ad::Var* s = src.find(map_name(name));
      if (!s) continue;
      ANIMLAB_REQUIRE(s->shape() == v.shape(), "copy shape mismatch for ", name);
      v.mutable_value() = s->val();
    }
  }
};

// ---- layers ----

struct Conv2dLayer {
  ad::Var w, b;
  int64_t stride = 1, pad = 1;

  static Conv2dLayer create(ParamStore& ps, const std::string& pfx, Rng& rng, int64_t in,
                            int64_t out, int64_t k, int64_t stride, int64_t pad,
                            bool zero_init = false) {
    Conv2dLayer l;
    double s = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    l.w = ps.add(pfx + ".w", zero_init ? Tensor({out, in, k, k})
                                       : rng.uniform_tensor({out, in, k, k}, -s, s));
    l.b = ps.add(pfx + ".b", Tensor({out}));
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct GroupNormLayer {
  ad::Var gamma, beta;
  int64_t groups = 1;

  static GroupNormLayer create(ParamStore& ps, const std::string& pfx, int64_t channels) {
    GroupNormLayer l;
    l.gamma = ps.add(pfx + ".gamma", Tensor({channels}, 1.0));
    l.beta = ps.add(pfx + ".beta", Tensor({channels}));
    l.groups = norm_groups(channels);
    return l;
  }

  ad::Var forward(const ad::Var& x) const { return ad::group_norm(x, groups, gamma, beta); }
};

struct LinearLayer {
  ad::Var w;  // [out, in]

  static LinearLayer create(ParamStore& ps, const std::string& pfx, Rng& rng, int64_t in,
                            int64_t out) {
    LinearLayer l;
    double s = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = ps.add(pfx + ".w", rng.uniform_tensor({out, in}, -s, s));
    return l;
  }

  ad::Var forward(const ad::Var& x) const { return ad::linear(x, w); }
};

struct ResBlock {
  GroupNormLayer n1, n2;
  Conv2dLayer c1, c2;
  LinearLayer temb_proj;
  std::optional<Conv2dLayer> skip;

  static ResBlock create(ParamStore& ps, const std::string& pfx, Rng& rng, int64_t in, int64_t out,
                         int64_t temb_dim) {
    ResBlock r;
    r.n1 = GroupNormLayer::create(ps, pfx + ".n1", in);
    r.c1 = Conv2dLayer::create(ps, pfx + ".c1", rng, in, out, 3, 1, 1);
    r.temb_proj = LinearLayer::create(ps, pfx + ".temb", rng, temb_dim, out);
    r.n2 = GroupNormLayer::create(ps, pfx + ".n2", out);
    r.c2 = Conv2dLayer::create(ps, pfx + ".c2", rng, out, out, 3, 1, 1);
    if (in != out) r.skip = Conv2dLayer::create(ps, pfx + ".skip", rng, in, out, 1, 1, 0);
    return r;
  }

  // x: [B, Cin, H, W], temb: [B, D]
  ad::Var forward(const ad::Var& x, const ad::Var& temb) const {
    ad::Var h = c1.forward(ad::silu(n1.forward(x)));
    h = ad::add_channel_rows(h, temb_proj.forward(temb));
    h = c2.forward(ad::silu(n2.forward(h)));
    return ad::add(skip ? skip->forward(x) : x, h);
  }
};

struct TimestepEmbed {
  LinearLayer l1, l2;
  int64_t sin_dim = 0, out_dim = 0;

  static TimestepEmbed create(ParamStore& ps, const std::string& pfx, Rng& rng, int64_t sin_dim,
                              int64_t out_dim) {
    TimestepEmbed e;
    e.sin_dim = sin_dim;
    e.out_dim = out_dim;
    e.l1 = LinearLayer::create(ps, pfx + ".l1", rng, sin_dim, out_dim);
    e.l2 = LinearLayer::create(ps, pfx + ".l2", rng, out_dim, out_dim);
    return e;
  }

  // One embedding row per sample.
  ad::Var forward(const std::vector<int64_t>& ts) const {
    Tensor rows({static_cast<int64_t>(ts.size()), sin_dim});
    for (size_t i = 0; i < ts.size(); ++i) {
      Tensor e = sinusoidal_timestep_embedding(ts[i], sin_dim);
      std::copy(e.data(), e.data() + sin_dim, rows.data() + static_cast<int64_t>(i) * sin_dim);
    }
    return l2.forward(ad::silu(l1.forward(ad::Var::leaf(std::move(rows), false))));
  }
};

struct SpatialAttnBlock {
  AttentionParams p;

  static SpatialAttnBlock create(ParamStore& ps, const std::string& pfx, Rng& rng,
                                 int64_t channels) {
    SpatialAttnBlock b;
    b.p.w_q = ps.add(pfx + ".sattn.wq", make_init(rng, channels));
    b.p.w_k = ps.add(pfx + ".sattn.wk", make_init(rng, channels));
    b.p.w_v = ps.add(pfx + ".sattn.wv", make_init(rng, channels));
    b.p.w_out = ps.add(pfx + ".sattn.wo", make_init(rng, channels));
    return b;
  }

  static Tensor make_init(Rng& rng, int64_t c) {
    double s = 1.0 / std::sqrt(static_cast<double>(c));
    return rng.uniform_tensor({c, c}, -s, s);
  }

  ad::Var forward(const ad::Var& x, const ad::Var& appearance = ad::Var()) const {
    return spatial_hybrid_attention(x, p, appearance);
  }
};

// Frame-axis attention; the output projection starts at zero so a freshly
// inflated model reproduces the 2D backbone exactly.
struct TemporalAttnBlock {
  AttentionParams p;

  static TemporalAttnBlock create(ParamStore& ps, const std::string& pfx, Rng& rng,
                                  int64_t channels) {
    TemporalAttnBlock b;
    b.p.w_q = ps.add(pfx + ".temporal.wq", SpatialAttnBlock::make_init(rng, channels));
    b.p.w_k = ps.add(pfx + ".temporal.wk", SpatialAttnBlock::make_init(rng, channels));
    b.p.w_v = ps.add(pfx + ".temporal.wv", SpatialAttnBlock::make_init(rng, channels));
    b.p.w_out = ps.add(pfx + ".temporal.wo", Tensor({channels, channels}));
    return b;
  }

  // x: [N*K, C, H, W]
  ad::Var forward(const ad::Var& x, int64_t n, int64_t k) const {
    int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
    ad::Var x5 = ad::permute(ad::reshape(x, {n, k, c, h, w}), {0, 2, 1, 3, 4});
    ad::Var y = temporal_attention(x5, p);
    return ad::reshape(ad::permute(y, {0, 2, 1, 3, 4}), {n * k, c, h, w});
  }
};

// ---- configuration ----

struct SiteInfo {
  std::string id;
  int64_t channels = 0;
  int64_t h = 0, w = 0;
};

struct BackboneConfig {
  int64_t in_channels = 3;
  int64_t height = 32, width = 32;
  int64_t base_channels = 32;
  std::vector<int64_t> channel_multipliers{1, 2};
  int64_t num_res_blocks = 1;
  std::vector<int64_t> attention_resolutions{16};
  int64_t temporal_pe_max_len = 32;

  int64_t levels() const { return static_cast<int64_t>(channel_multipliers.size()); }
  int64_t channels_at(int64_t l) const {
    return base_channels * channel_multipliers[static_cast<size_t>(l)];
  }
  int64_t res_h(int64_t l) const { return height >> l; }
  int64_t res_w(int64_t l) const { return width >> l; }
  bool attn_at(int64_t l) const {
    for (int64_t r : attention_resolutions)
      if (r == res_h(l)) return true;
    return false;
  }
  int64_t temb_dim() const { return 4 * base_channels; }

  void validate() const {
    ANIMLAB_REQUIRE(in_channels >= 1, "in_channels must be >= 1, got ", in_channels);
    ANIMLAB_REQUIRE(base_channels >= 8, "base_channels must be >= 8, got ", base_channels);
    ANIMLAB_REQUIRE(base_channels % 2 == 0, "base_channels must be even, got ", base_channels);
    ANIMLAB_REQUIRE(!channel_multipliers.empty(), "channel_multipliers must not be empty");
    for (size_t i = 0; i < channel_multipliers.size(); ++i) {
      ANIMLAB_REQUIRE(channel_multipliers[i] >= 1, "channel multipliers must be >= 1");
      ANIMLAB_REQUIRE(i == 0 || channel_multipliers[i] >= channel_multipliers[i - 1],
                      "channel multipliers must be nondecreasing");
    }
    ANIMLAB_REQUIRE(num_res_blocks >= 1, "num_res_blocks must be >= 1, got ", num_res_blocks);
    ANIMLAB_REQUIRE(temporal_pe_max_len >= 1, "temporal_pe_max_len must be >= 1");
    int64_t div = int64_t{1} << levels();
    ANIMLAB_REQUIRE(height >= 2 * div && height % div == 0, "height ", height,
                    " must be a multiple of ", div, " and at least ", 2 * div);
    ANIMLAB_REQUIRE(width >= 2 * div && width % div == 0, "width ", width,
                    " must be a multiple of ", div, " and at least ", 2 * div);
    for (int64_t r : attention_resolutions) {
      bool ok = false;
      for (int64_t l = 0; l < levels(); ++l) ok = ok || (r == res_h(l));
      ANIMLAB_REQUIRE(ok, "attention resolution ", r, " matches no feature level");
    }
  }

  // Spatial attention positions that accept appearance tokens: the middle
  // block plus every attention position on the upsampling path.
  std::vector<SiteInfo> injection_sites() const {
    std::vector<SiteInfo> out;
    int64_t lv = levels();
    out.push_back({"mid", channels_at(lv - 1), height >> lv, width >> lv});
    for (int64_t l = lv - 1; l >= 0; --l) {
      if (!attn_at(l)) continue;
      for (int64_t j = 0; j <= num_res_blocks; ++j)
        out.push_back({cat("up.", l, ".", j), channels_at(l), res_h(l), res_w(l)});
    }
    return out;
  }

  // Positions that accept pose residuals: every skip connection plus the
  // middle block output.
  std::vector<SiteInfo> residual_sites() const {
    std::vector<SiteInfo> out;
    int64_t idx = 0;
    out.push_back({cat("skip.", idx++), channels_at(0), height, width});
    for (int64_t l = 0; l < levels(); ++l) {
      out.push_back({cat("skip.", idx++), channels_at(l), res_h(l), res_w(l)});
      if (l + 1 < levels())
        out.push_back({cat("skip.", idx++), channels_at(l), res_h(l + 1), res_w(l + 1)});
    }
    int64_t lv = levels();
    out.push_back({"mid", channels_at(lv - 1), height >> lv, width >> lv});
    return out;
  }
};

// Appearance tokens keyed by injection site id; each entry is [N, S, C_site].
struct NamedTokens {
  std::vector<std::pair<std::string, ad::Var>> items;
  int64_t t = -1;

  const ad::Var* find(const std::string& id) const {
    for (auto& [n, v] : items)
      if (n == id) return &v;
    return nullptr;
  }
};

// Pose residuals keyed by residual site id; each entry is [N, C, K, h, w].
struct NamedResiduals {
  std::vector<std::pair<std::string, ad::Var>> items;

  const ad::Var* find(const std::string& id) const {
    for (auto& [n, v] : items)
      if (n == id) return &v;
    return nullptr;
  }
};

namespace detail {

inline void check_conditioning_keys(const std::vector<SiteInfo>& sites,
                                    const std::vector<std::pair<std::string, ad::Var>>& items,
                                    const char* what) {
  std::string missing, extra;
  for (const auto& s : sites) {
    bool found = false;
    for (auto& [n, v] : items) found = found || (n == s.id);
    if (!found) missing += missing.empty() ? s.id : ", " + s.id;
  }
  for (auto& [n, v] : items) {
    bool known = false;
    for (const auto& s : sites) known = known || (n == s.id);
    if (!known) extra += extra.empty() ? n : ", " + n;
  }
  if (!missing.empty()) throw ConfigError(cat(what, ": missing conditioning sites: ", missing));
  if (!extra.empty()) throw ConfigError(cat(what, ": unknown conditioning sites: ", extra));
}

}  // namespace detail

// The denoising backbone: a 2D UNet whose attention positions also carry
// frame-axis attention, run on [N, C, K, H, W] batches of K-frame segments.
struct TemporalUNet {
  BackboneConfig cfg;
  ParamStore params;

  Conv2dLayer conv_in;
  TimestepEmbed temb;

  struct DownLevel {
    std::vector<ResBlock> blocks;
    std::vector<SpatialAttnBlock> sattn;  // one per block when the level attends
    std::vector<TemporalAttnBlock> tattn;
    Conv2dLayer down;
  };
  std::vector<DownLevel> down;

  ResBlock mid_res1, mid_res2;
  SpatialAttnBlock mid_sattn;
  TemporalAttnBlock mid_tattn;

  struct UpLevel {
    Conv2dLayer up_conv;
    std::vector<ResBlock> blocks;  // num_res_blocks + 1
    std::vector<SpatialAttnBlock> sattn;
    std::vector<TemporalAttnBlock> tattn;
  };
  std::vector<UpLevel> up;

  GroupNormLayer out_norm;
  Conv2dLayer out_conv;

  static TemporalUNet create(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    TemporalUNet net;
    net.cfg = cfg;
    Rng rng = derive_rng(seed, "backbone");
    ParamStore& ps = net.params;
    int64_t td = cfg.temb_dim();

    net.conv_in = Conv2dLayer::create(ps, "conv_in", rng, cfg.in_channels, cfg.channels_at(0), 3, 1, 1);
    net.temb = TimestepEmbed::create(ps, "temb", rng, cfg.base_channels, td);

    int64_t prev = cfg.channels_at(0);
    for (int64_t l = 0; l < cfg.levels(); ++l) {
      DownLevel lvl;
      int64_t ch = cfg.channels_at(l);
      for (int64_t j = 0; j < cfg.num_res_blocks; ++j) {
        std::string pfx = cat("down.", l, ".", j);
        lvl.blocks.push_back(ResBlock::create(ps, pfx, rng, j == 0 ? prev : ch, ch, td));
        if (cfg.attn_at(l)) {
          lvl.sattn.push_back(SpatialAttnBlock::create(ps, pfx, rng, ch));
          lvl.tattn.push_back(TemporalAttnBlock::create(ps, pfx, rng, ch));
        }
      }
      lvl.down = Conv2dLayer::create(ps, cat("down.", l, ".downsample"), rng, ch, ch, 3, 2, 1);
      net.down.push_back(std::move(lvl));
      prev = ch;
    }

    int64_t mc = cfg.channels_at(cfg.levels() - 1);
    net.mid_res1 = ResBlock::create(ps, "mid.res1", rng, mc, mc, td);
    net.mid_sattn = SpatialAttnBlock::create(ps, "mid", rng, mc);
    net.mid_tattn = TemporalAttnBlock::create(ps, "mid", rng, mc);
    net.mid_res2 = ResBlock::create(ps, "mid.res2", rng, mc, mc, td);

    // Mirror of the skip pushes, consumed deepest-first on the way up.
    std::vector<int64_t> skip_ch;
    skip_ch.push_back(cfg.channels_at(0));
    for (int64_t l = 0; l < cfg.levels(); ++l) {
      skip_ch.push_back(cfg.channels_at(l));
      if (l + 1 < cfg.levels()) skip_ch.push_back(cfg.channels_at(l));
    }

    int64_t carry = mc;
    size_t skip_top = skip_ch.size();
    for (int64_t l = cfg.levels() - 1; l >= 0; --l) {
      UpLevel lvl;
      int64_t ch = cfg.channels_at(l);
      lvl.up_conv = Conv2dLayer::create(ps, cat("up.", l, ".upsample"), rng, carry, ch, 3, 1, 1);
      for (int64_t j = 0; j <= cfg.num_res_blocks; ++j) {
        std::string pfx = cat("up.", l, ".", j);
        int64_t in = ch;
        if (j == 0 || j == cfg.num_res_blocks) in += skip_ch[--skip_top];
        lvl.blocks.push_back(ResBlock::create(ps, pfx, rng, in, ch, td));
        if (cfg.attn_at(l)) {
          lvl.sattn.push_back(SpatialAttnBlock::create(ps, pfx, rng, ch));
          lvl.tattn.push_back(TemporalAttnBlock::create(ps, pfx, rng, ch));
        }
      }
      net.up.push_back(std::move(lvl));
      carry = ch;
    }

    net.out_norm = GroupNormLayer::create(ps, "out.norm", cfg.channels_at(0));
    net.out_conv = Conv2dLayer::create(ps, "out.conv", rng, cfg.channels_at(0), cfg.in_channels, 3, 1, 1);
    return net;
  }

  // z: [N, C, K, H, W]; ts: one diffusion step per sample; appearance tokens
  // and pose residuals must cover every site when supplied.
  ad::Var forward(const ad::Var& z, const std::vector<int64_t>& ts, const NamedTokens* appearance,
                  const NamedResiduals* pose, bool temporal_on) const {
    const Shape& s = z.shape();
    ANIMLAB_REQUIRE(s.size() == 5, "backbone expects [N,C,K,H,W], got ", shape_str(s));
    int64_t n = s[0], c = s[1], k = s[2], h = s[3], w = s[4];
    ANIMLAB_REQUIRE(c == cfg.in_channels, "latent channels ", c, " vs configured ", cfg.in_channels);
    ANIMLAB_REQUIRE(h == cfg.height && w == cfg.width, "latent spatial size ", h, "x", w,
                    " vs configured ", cfg.height, "x", cfg.width);
    ANIMLAB_REQUIRE(k >= 1, "segment needs at least one frame");
    ANIMLAB_REQUIRE(k <= cfg.temporal_pe_max_len, "segment length ", k,
                    " exceeds temporal_pe_max_len ", cfg.temporal_pe_max_len);
    ANIMLAB_REQUIRE(static_cast<int64_t>(ts.size()) == n, "timestep count ", ts.size(),
                    " vs batch ", n);
    for (int64_t t : ts) ANIMLAB_REQUIRE(t >= 0, "negative timestep ", t);

    if (appearance)
      detail::check_conditioning_keys(cfg.injection_sites(), appearance->items, "appearance");
    if (pose) detail::check_conditioning_keys(cfg.residual_sites(), pose->items, "pose");

    ad::Var x = ad::reshape(ad::permute(z, {0, 2, 1, 3, 4}), {n * k, c, h, w});
    ad::Var emb = ad::repeat_rows(temb.forward(ts), k);  // [N*K, D]

    auto site_tokens = [&](const std::string& id) -> ad::Var {
      if (!appearance) return ad::Var();
      const ad::Var* tok = appearance->find(id);
      ANIMLAB_REQUIRE(tok->shape().size() == 3 && tok->dim(0) == n,
                      "appearance tokens for ", id, " must be [N,S,C], got ",
                      shape_str(tok->shape()));
      return ad::repeat_rows(*tok, k);  // [N*K, S, C]
    };
    auto add_residual = [&](ad::Var f, const std::string& id) -> ad::Var {
      if (!pose) return f;
      const ad::Var* r = pose->find(id);
      const Shape& rs = r->shape();
      ANIMLAB_REQUIRE(rs.size() == 5 && rs[0] == n && rs[2] == k, "pose residual for ", id,
                      " must be [N,C,K,h,w], got ", shape_str(rs));
      ANIMLAB_REQUIRE(rs[1] == f.dim(1) && rs[3] == f.dim(2) && rs[4] == f.dim(3),
                      "pose residual shape for ", id, " is ", shape_str(rs),
                      " but the feature map is ", shape_str(f.shape()));
      ad::Var r4 = ad::reshape(ad::permute(*r, {0, 2, 1, 3, 4}), {n * k, rs[1], rs[3], rs[4]});
      return ad::add(f, r4);
    };

    // Residuals land on the skip tensors as the decoder consumes them (and on
    // the middle output); the encoder's own flow stays untouched.
    std::vector<ad::Var> skips;
    int64_t site = 0;
    x = conv_in.forward(x);
    skips.push_back(add_residual(x, cat("skip.", site++)));

    for (int64_t l = 0; l < cfg.levels(); ++l) {
      const DownLevel& lvl = down[static_cast<size_t>(l)];
      for (size_t j = 0; j < lvl.blocks.size(); ++j) {
        x = lvl.blocks[j].forward(x, emb);
        if (!lvl.sattn.empty()) {
          x = lvl.sattn[j].forward(x);  // self-attention only on the way down
          if (temporal_on) x = lvl.tattn[j].forward(x, n, k);
        }
      }
      skips.push_back(add_residual(x, cat("skip.", site++)));
      x = lvl.down.forward(x);
      if (l + 1 < cfg.levels()) skips.push_back(add_residual(x, cat("skip.", site++)));
    }

    x = mid_res1.forward(x, emb);
    x = mid_sattn.forward(x, site_tokens("mid"));
    if (temporal_on) x = mid_tattn.forward(x, n, k);
    x = mid_res2.forward(x, emb);
    x = add_residual(x, "mid");

    for (size_t ui = 0; ui < up.size(); ++ui) {
      const UpLevel& lvl = up[ui];
      int64_t l = cfg.levels() - 1 - static_cast<int64_t>(ui);
      x = lvl.up_conv.forward(ad::upsample_nearest2(x));
      for (size_t j = 0; j < lvl.blocks.size(); ++j) {
        if (j == 0 || j == lvl.blocks.size() - 1) {
          ad::Var sk = skips.back();
          skips.pop_back();
          x = ad::concat(1, {x, sk});
        }
        x = lvl.blocks[j].forward(x, emb);
        if (!lvl.sattn.empty()) {
          x = lvl.sattn[j].forward(x, site_tokens(cat("up.", l, ".", j)));
          if (temporal_on) x = lvl.tattn[j].forward(x, n, k);
        }
      }
    }

    x = out_conv.forward(ad::silu(out_norm.forward(x)));
    return ad::permute(ad::reshape(x, {n, k, c, h, w}), {0, 2, 1, 3, 4});
  }
};

}  // namespace animlab
