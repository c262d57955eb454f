#pragma once

#include <string>
#include <vector>

#include "animlab/unet.hpp"

namespace animlab {

// Copy of the backbone's downsampling half plus middle block, fed with the
// noised latent plus an embedded pose map. Every residual site goes out
// through a zero-initialized 1x1 conv, so an untrained net contributes
// exactly nothing. Frames are processed independently (no temporal layers).
struct PoseControlNet {
  BackboneConfig cfg;
  int64_t pose_channels = 0;
  ParamStore params;

  Conv2dLayer emb1, emb2, emb3;
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

  std::vector<Conv2dLayer> zero_out;  // one per residual site, in site order

  static PoseControlNet create(const BackboneConfig& cfg, int64_t pose_channels, uint64_t seed) {
    cfg.validate();
    ANIMLAB_REQUIRE(pose_channels >= 1, "pose_channels must be >= 1, got ", pose_channels);
    PoseControlNet net;
    net.cfg = cfg;
    net.pose_channels = pose_channels;
    Rng rng = derive_rng(seed, "pose_control");
    ParamStore& ps = net.params;
    int64_t td = cfg.temb_dim();

    net.emb1 = Conv2dLayer::create(ps, "pose_embed.1", rng, pose_channels, 16, 3, 1, 1);
    net.emb2 = Conv2dLayer::create(ps, "pose_embed.2", rng, 16, 16, 3, 1, 1);
    net.emb3 = Conv2dLayer::create(ps, "pose_embed.3", rng, 16, cfg.in_channels, 3, 1, 1, true);

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

    for (const SiteInfo& s : cfg.residual_sites())
      net.zero_out.push_back(
          Conv2dLayer::create(ps, "zero." + s.id, rng, s.channels, s.channels, 1, 1, 0, true));
    return net;
  }

  void clone_init_from(const ParamStore& backbone) {
    params.copy_matching_from(backbone, [](const std::string& n) { return n; });
  }

  // z: [N, C, K, H, W] latent segment; poses: [N, K, P, H, W] pose maps;
  // ts: timestep per sample. Residuals come back in site order as
  // [N, C_site, K, h, w].
  NamedResiduals encode(const ad::Var& z, const Tensor& poses, const std::vector<int64_t>& ts) const {
    const Shape& zs = z.shape();
    ANIMLAB_REQUIRE(zs.size() == 5, "pose control latent must be [N,C,K,H,W], got ", shape_str(zs));
    int64_t n = zs[0], c = zs[1], k = zs[2], h = zs[3], w = zs[4];
    ANIMLAB_REQUIRE(c == cfg.in_channels && h == cfg.height && w == cfg.width,
                    "pose control latent ", shape_str(zs), " does not match the configured model");
    const Shape& p5 = poses.shape();
    ANIMLAB_REQUIRE(p5.size() == 5, "pose maps must be [N,K,P,H,W], got ", shape_str(p5));
    ANIMLAB_REQUIRE(p5[0] == n && p5[1] == k, "pose maps cover ", p5[0], "x", p5[1],
                    " frames but the latent is ", n, "x", k);
    ANIMLAB_REQUIRE(p5[2] == pose_channels, "pose maps have ", p5[2], " part channels, expected ",
                    pose_channels);
    ANIMLAB_REQUIRE(p5[3] == h && p5[4] == w, "pose map size ", p5[3], "x", p5[4],
                    " does not match the latent ", h, "x", w);
    ANIMLAB_REQUIRE(static_cast<int64_t>(ts.size()) == n, "timestep count ", ts.size(),
                    " vs batch ", n);
    for (int64_t t : ts) ANIMLAB_REQUIRE(t >= 0, "negative timestep ", t);

    ad::Var x4 = ad::reshape(ad::permute(z, {0, 2, 1, 3, 4}), {n * k, c, h, w});
    ad::Var p4 = ad::Var::leaf(poses.reshaped({n * k, pose_channels, h, w}), false);
    ad::Var pe = emb3.forward(ad::silu(emb2.forward(ad::silu(emb1.forward(p4)))));
    ad::Var x = ad::add(x4, pe);
    ad::Var emb = ad::repeat_rows(temb.forward(ts), k);

    std::vector<ad::Var> captured;
    x = conv_in.forward(x);
    captured.push_back(x);
    for (int64_t l = 0; l < cfg.levels(); ++l) {
      const DownLevel& lvl = down[static_cast<size_t>(l)];
      for (size_t j = 0; j < lvl.blocks.size(); ++j) {
        x = lvl.blocks[j].forward(x, emb);
        if (!lvl.sattn.empty()) x = lvl.sattn[j].forward(x);
      }
      captured.push_back(x);
      x = lvl.down.forward(x);
      if (l + 1 < cfg.levels()) captured.push_back(x);
    }
    x = mid_res1.forward(x, emb);
    x = mid_sattn.forward(x);
    x = mid_res2.forward(x, emb);
    captured.push_back(x);

    auto sites = cfg.residual_sites();
    ANIMLAB_REQUIRE(captured.size() == sites.size(), "internal: capture count ", captured.size(),
                    " vs site count ", sites.size());
    NamedResiduals out;
    for (size_t i = 0; i < sites.size(); ++i) {
      ad::Var r = zero_out[i].forward(captured[i]);
      int64_t rc = r.dim(1), rh = r.dim(2), rw = r.dim(3);
      out.items.emplace_back(sites[i].id,
                             ad::permute(ad::reshape(r, {n, k, rc, rh, rw}), {0, 2, 1, 3, 4}));
    }
    return out;
  }
};

}  // namespace animlab
