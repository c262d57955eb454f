#pragma once

#include <string>
#include <vector>

#include "animlab/unet.hpp"

namespace animlab {

// Attention hidden states are layer-normalized (no affine) before they are
// handed to the backbone as keys/values.
inline ad::Var normalize_hidden(const ad::Var& tokens) { return ad::layer_norm_last(tokens, 1e-5); }

// 2D copy of the backbone (no temporal layers). Runs on the reference image
// and captures the normalized token streams entering the middle and
// upsampling spatial attention positions.
struct AppearanceEncoder {
  BackboneConfig cfg;
  ParamStore params;

  Conv2dLayer conv_in;
  TimestepEmbed temb;

  struct DownLevel {
    std::vector<ResBlock> blocks;
    std::vector<SpatialAttnBlock> sattn;
    Conv2dLayer down;
  };
  std::vector<DownLevel> down;

  ResBlock mid_res1, mid_res2;
  SpatialAttnBlock mid_sattn;

  struct UpLevel {
    Conv2dLayer up_conv;
    std::vector<ResBlock> blocks;
    std::vector<SpatialAttnBlock> sattn;
  };
  std::vector<UpLevel> up;

  GroupNormLayer out_norm;
  Conv2dLayer out_conv;

  static AppearanceEncoder create(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    AppearanceEncoder net;
    net.cfg = cfg;
    Rng rng = derive_rng(seed, "appearance");
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
        if (cfg.attn_at(l)) lvl.sattn.push_back(SpatialAttnBlock::create(ps, pfx, rng, ch));
      }
      lvl.down = Conv2dLayer::create(ps, cat("down.", l, ".downsample"), rng, ch, ch, 3, 2, 1);
      net.down.push_back(std::move(lvl));
      prev = ch;
    }

    int64_t mc = cfg.channels_at(cfg.levels() - 1);
    net.mid_res1 = ResBlock::create(ps, "mid.res1", rng, mc, mc, td);
    net.mid_sattn = SpatialAttnBlock::create(ps, "mid", rng, mc);
    net.mid_res2 = ResBlock::create(ps, "mid.res2", rng, mc, mc, td);

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
        if (cfg.attn_at(l)) lvl.sattn.push_back(SpatialAttnBlock::create(ps, pfx, rng, ch));
      }
      net.up.push_back(std::move(lvl));
      carry = ch;
    }

    net.out_norm = GroupNormLayer::create(ps, "out.norm", cfg.channels_at(0));
    net.out_conv = Conv2dLayer::create(ps, "out.conv", rng, cfg.channels_at(0), cfg.in_channels, 3, 1, 1);
    return net;
  }

  // Start from the backbone's 2D weights; parameter names line up one-to-one.
  void clone_init_from(const ParamStore& backbone) {
    params.copy_matching_from(backbone, [](const std::string& n) { return n; });
  }

  // z_ref: [N, C, H, W] reference images already moved to the conditioning
  // timestep; ts: the matching timestep per sample. Tokens come back in
  // injection-site order, one [N, S, C_site] entry per site.
  NamedTokens encode(const ad::Var& z_ref, const std::vector<int64_t>& ts) const {
    const Shape& s = z_ref.shape();
    ANIMLAB_REQUIRE(s.size() == 4, "appearance input must be [N,C,H,W], got ", shape_str(s));
    ANIMLAB_REQUIRE(s[1] == cfg.in_channels && s[2] == cfg.height && s[3] == cfg.width,
                    "appearance input ", shape_str(s), " does not match the configured latent");
    int64_t n = s[0];
    ANIMLAB_REQUIRE(static_cast<int64_t>(ts.size()) == n, "timestep count ", ts.size(),
                    " vs batch ", n);
    for (int64_t t : ts) ANIMLAB_REQUIRE(t >= 0, "negative timestep ", t);

    size_t want = cfg.injection_sites().size();
    NamedTokens out;
    auto capture = [&](const std::string& id, const ad::Var& f) {
      int64_t c = f.dim(1), h = f.dim(2), w = f.dim(3);
      ad::Var tok = ad::reshape(ad::permute(f, {0, 2, 3, 1}), {n, h * w, c});
      out.items.emplace_back(id, normalize_hidden(tok));
    };

    ad::Var emb = temb.forward(ts);
    ad::Var x = conv_in.forward(z_ref);
    std::vector<ad::Var> skips;
    skips.push_back(x);
    for (int64_t l = 0; l < cfg.levels(); ++l) {
      const DownLevel& lvl = down[static_cast<size_t>(l)];
      for (size_t j = 0; j < lvl.blocks.size(); ++j) {
        x = lvl.blocks[j].forward(x, emb);
        if (!lvl.sattn.empty()) x = lvl.sattn[j].forward(x);
      }
      skips.push_back(x);
      x = lvl.down.forward(x);
      if (l + 1 < cfg.levels()) skips.push_back(x);
    }

    x = mid_res1.forward(x, emb);
    capture("mid", x);
    if (out.items.size() < want) {
      x = mid_sattn.forward(x);
      x = mid_res2.forward(x, emb);
      for (size_t ui = 0; ui < up.size() && out.items.size() < want; ++ui) {
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
            capture(cat("up.", l, ".", j), x);
            if (out.items.size() == want) break;  // nothing downstream feeds a capture
            x = lvl.sattn[j].forward(x);
          }
        }
      }
    }
    return out;
  }
};

}  // namespace animlab
