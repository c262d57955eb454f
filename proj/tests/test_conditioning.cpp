#include <catch2/catch_amalgamated.hpp>

#include "animlab/appearance.hpp"
#include "animlab/pose_control.hpp"
#include "helpers.hpp"

using namespace animlab;
namespace ad = animlab::ad;

namespace {

BackboneConfig small_cfg() {
  BackboneConfig c;
  c.in_channels = 3;
  c.height = c.width = 16;
  c.base_channels = 8;
  c.channel_multipliers = {1, 2};
  c.num_res_blocks = 1;
  c.attention_resolutions = {8};
  c.temporal_pe_max_len = 8;
  return c;
}

}  // namespace

TEST_CASE("normalize_hidden standardizes each token") {
  Tensor ones({2, 4}, 1.0);
  Tensor z = normalize_hidden(ad::Var::leaf(ones)).val();
  for (int64_t i = 0; i < 8; ++i) REQUIRE(z[i] == 0.0);

  Tensor pm({1, 2}, {1.0, -1.0});
  Tensor n = normalize_hidden(ad::Var::leaf(pm)).val();
  double want = 1.0 / std::sqrt(1.0 + 1e-5);
  REQUIRE(n[0] == Catch::Approx(want).margin(1e-12));
  REQUIRE(n[1] == Catch::Approx(-want).margin(1e-12));

  Rng rng(41);
  Tensor r = rng.normal_tensor({5, 32});
  Tensor nr = normalize_hidden(ad::Var::leaf(r)).val();
  for (int64_t row = 0; row < 5; ++row) {
    double mu = 0, var = 0;
    for (int64_t i = 0; i < 32; ++i) mu += nr.at({row, i});
    mu /= 32;
    for (int64_t i = 0; i < 32; ++i) var += (nr.at({row, i}) - mu) * (nr.at({row, i}) - mu);
    var /= 32;
    REQUIRE(std::abs(mu) < 1e-9);
    REQUIRE(var == Catch::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("appearance encoder covers exactly the injection sites") {
  BackboneConfig cfg = small_cfg();
  AppearanceEncoder enc = AppearanceEncoder::create(cfg, 5);
  Rng rng(42);
  ad::NoGrad ng;
  Tensor ref = rng.normal_tensor({2, 3, 16, 16});
  NamedTokens tok = enc.encode(ad::Var::leaf(ref), {3, 7});
  auto sites = cfg.injection_sites();
  REQUIRE(tok.items.size() == sites.size());
  for (size_t i = 0; i < sites.size(); ++i) {
    REQUIRE(tok.items[i].first == sites[i].id);
    REQUIRE(tok.items[i].second.shape() ==
            Shape({2, sites[i].h * sites[i].w, sites[i].channels}));
  }
  // tokens are normalized: per-token mean 0, unit variance
  const Tensor& mid = tok.items[0].second.val();
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t s = 0; s < mid.dim(1); ++s) {
      double mu = 0, var = 0;
      int64_t c = mid.dim(2);
      for (int64_t i = 0; i < c; ++i) mu += mid.at({b, s, i});
      mu /= static_cast<double>(c);
      for (int64_t i = 0; i < c; ++i) {
        double d = mid.at({b, s, i}) - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      REQUIRE(std::abs(mu) < 1e-9);
      REQUIRE(var == Catch::Approx(1.0).epsilon(1e-2));
    }

  NamedTokens tok2 = enc.encode(ad::Var::leaf(ref), {3, 7});
  for (size_t i = 0; i < tok.items.size(); ++i)
    REQUIRE(bit_equal(tok.items[i].second.val(), tok2.items[i].second.val()));

  Tensor ref2 = rng.normal_tensor({2, 3, 16, 16});
  NamedTokens tok3 = enc.encode(ad::Var::leaf(ref2), {3, 7});
  REQUIRE(max_abs_diff(tok.items[0].second.val(), tok3.items[0].second.val()) > 1e-8);

  REQUIRE_THROWS_AS(enc.encode(ad::Var::leaf(ref), {3}), std::invalid_argument);
  REQUIRE_THROWS_AS(enc.encode(ad::Var::leaf(rng.normal_tensor({1, 3, 8, 8})), {0}),
                    std::invalid_argument);
}

TEST_CASE("appearance encoder clones the backbone's 2D weights") {
  BackboneConfig cfg = small_cfg();
  TemporalUNet bb = TemporalUNet::create(cfg, 77);
  AppearanceEncoder enc = AppearanceEncoder::create(cfg, 77);
  enc.clone_init_from(bb.params);
  size_t checked = 0;
  for (auto& [name, v] : enc.params.entries) {
    const ad::Var* src = bb.params.find(name);
    REQUIRE(src != nullptr);  // every 2D backbone tensor has a counterpart
    REQUIRE(bit_equal(v.val(), src->val()));
    ++checked;
  }
  REQUIRE(checked == enc.params.size());
  // the backbone has strictly more tensors: the temporal layers
  REQUIRE(bb.params.size() > enc.params.size());
  for (auto& [name, v] : bb.params.entries)
    if (name.find(".temporal.") != std::string::npos) REQUIRE(enc.params.find(name) == nullptr);
}

TEST_CASE("untrained pose control contributes exactly nothing") {
  BackboneConfig cfg = small_cfg();
  PoseControlNet cn = PoseControlNet::create(cfg, 6, 5);
  TemporalUNet net = TemporalUNet::create(cfg, 5);
  cn.clone_init_from(net.params);
  Rng rng(43);
  ad::NoGrad ng;
  Tensor z = rng.normal_tensor({1, 3, 2, 16, 16});
  Tensor poses = rng.uniform_tensor({1, 2, 6, 16, 16}, 0.0, 1.0);
  NamedResiduals res = cn.encode(ad::Var::leaf(z), poses, {4});
  auto sites = cfg.residual_sites();
  REQUIRE(res.items.size() == sites.size());
  for (size_t i = 0; i < sites.size(); ++i) {
    REQUIRE(res.items[i].first == sites[i].id);
    REQUIRE(res.items[i].second.shape() ==
            Shape({1, sites[i].channels, 2, sites[i].h, sites[i].w}));
    REQUIRE(max_abs(res.items[i].second.val()) == 0.0);
  }
  // and the backbone output with those residuals is bit-identical
  Tensor base = net.forward(ad::Var::leaf(z), {4}, nullptr, nullptr, true).val();
  Tensor cond = net.forward(ad::Var::leaf(z), {4}, nullptr, &res, true).val();
  REQUIRE(bit_equal(base, cond));
}

TEST_CASE("middle pose residual has the documented default shape") {
  BackboneConfig cfg;  // defaults: 32x32, base 32, multipliers {1,2}
  PoseControlNet cn = PoseControlNet::create(cfg, 6, 9);
  Rng rng(44);
  ad::NoGrad ng;
  Tensor z = rng.normal_tensor({1, 3, 1, 32, 32});
  Tensor poses = rng.uniform_tensor({1, 1, 6, 32, 32}, 0.0, 1.0);
  NamedResiduals res = cn.encode(ad::Var::leaf(z), poses, {0});
  const ad::Var* mid = res.find("mid");
  REQUIRE(mid != nullptr);
  REQUIRE(mid->shape() == Shape({1, 64, 1, 8, 8}));
}

TEST_CASE("pose control processes frames independently") {
  BackboneConfig cfg = small_cfg();
  PoseControlNet cn = PoseControlNet::create(cfg, 6, 15);
  // both gates start at zero: the embedder's last conv and the output convs.
  // open them so the residuals actually carry pose signal
  Rng wr(1);
  for (auto& [name, v] : cn.params.entries)
    if ((name.rfind("zero.", 0) == 0 || name == "pose_embed.3.w") && name.back() == 'w')
      v.mutable_value() = wr.uniform_tensor(v.shape(), -0.2, 0.2);
  Rng rng(45);
  ad::NoGrad ng;
  Tensor z = rng.normal_tensor({1, 3, 3, 16, 16});
  Tensor poses = rng.uniform_tensor({1, 3, 6, 16, 16}, 0.0, 1.0);
  NamedResiduals base = cn.encode(ad::Var::leaf(z), poses, {4});
  REQUIRE(max_abs(base.find("mid")->val()) > 0.0);

  Tensor poses2 = poses;
  for (int64_t i = 0; i < 6 * 16 * 16; ++i)
    poses2[2 * 6 * 16 * 16 + i] = 1.0 - poses2[2 * 6 * 16 * 16 + i];  // flip frame 2
  NamedResiduals pert = cn.encode(ad::Var::leaf(z), poses2, {4});
  for (size_t s = 0; s < base.items.size(); ++s) {
    const Tensor& a = base.items[s].second.val();
    const Tensor& b = pert.items[s].second.val();
    int64_t ch = a.dim(1), h = a.dim(3), w = a.dim(4);
    double delta2 = 0;
    for (int64_t c = 0; c < ch; ++c)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          REQUIRE(a.at({0, c, 0, y, x}) == b.at({0, c, 0, y, x}));
          REQUIRE(a.at({0, c, 1, y, x}) == b.at({0, c, 1, y, x}));
          delta2 += std::abs(a.at({0, c, 2, y, x}) - b.at({0, c, 2, y, x}));
        }
    REQUIRE(delta2 > 0.0);
  }
}

TEST_CASE("pose control validates its inputs") {
  BackboneConfig cfg = small_cfg();
  PoseControlNet cn = PoseControlNet::create(cfg, 6, 15);
  Rng rng(46);
  ad::NoGrad ng;
  Tensor z = rng.normal_tensor({1, 3, 2, 16, 16});
  REQUIRE_THROWS_AS(cn.encode(ad::Var::leaf(z), rng.uniform_tensor({1, 2, 6, 8, 8}, 0, 1), {0}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cn.encode(ad::Var::leaf(z), rng.uniform_tensor({1, 2, 5, 16, 16}, 0, 1), {0}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cn.encode(ad::Var::leaf(z), rng.uniform_tensor({1, 3, 6, 16, 16}, 0, 1), {0}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cn.encode(ad::Var::leaf(z), rng.uniform_tensor({1, 2, 6, 16, 16}, 0, 1), {0, 1}),
                    std::invalid_argument);
}

TEST_CASE("pose control trunk mirrors the backbone's down half") {
  BackboneConfig cfg = small_cfg();
  TemporalUNet bb = TemporalUNet::create(cfg, 31);
  PoseControlNet cn = PoseControlNet::create(cfg, 6, 31);
  cn.clone_init_from(bb.params);
  size_t shared = 0;
  for (auto& [name, v] : cn.params.entries) {
    if (name.rfind("pose_embed.", 0) == 0 || name.rfind("zero.", 0) == 0) continue;
    const ad::Var* src = bb.params.find(name);
    REQUIRE(src != nullptr);
    REQUIRE(src->shape() == v.shape());
    REQUIRE(bit_equal(v.val(), src->val()));
    REQUIRE(name.find("up.") == std::string::npos);  // no upsampling half
    ++shared;
  }
  REQUIRE(shared > 0);
}

TEST_CASE("zero convolutions gate the gradient flow") {
  BackboneConfig cfg = small_cfg();
  PoseControlNet cn = PoseControlNet::create(cfg, 6, 8);
  Rng rng(47);
  Tensor z = rng.normal_tensor({1, 3, 1, 16, 16});
  Tensor poses = rng.uniform_tensor({1, 1, 6, 16, 16}, 0.0, 1.0);

  auto loss_of = [&]() {
    NamedResiduals res = cn.encode(ad::Var::leaf(z), poses, {2});
    std::vector<ad::Var> sums;
    for (auto& [id, r] : res.items) sums.push_back(ad::sum_all(r));
    ad::Var total = sums[0];
    for (size_t i = 1; i < sums.size(); ++i) total = ad::add(total, sums[i]);
    return total;
  };

  ad::Var loss = loss_of();
  ad::backward(loss);
  // at init the zero convs see gradient but everything behind them is gated off
  REQUIRE(max_abs(cn.params.find("zero.mid.w")->grad()) > 0.0);
  ad::Var* deep = cn.params.find("pose_embed.1.w");
  REQUIRE((!deep->has_grad() || max_abs(deep->grad()) == 0.0));
  ad::Var* trunk = cn.params.find("conv_in.w");
  REQUIRE((!trunk->has_grad() || max_abs(trunk->grad()) == 0.0));

  // once the zero convs and the embedder's zeroed tail move off zero,
  // gradient reaches the embedder and trunk
  Rng zr(3);
  for (auto& [name, v] : cn.params.entries)
    if ((name.rfind("zero.", 0) == 0 || name == "pose_embed.3.w") && name.back() == 'w')
      v.mutable_value() = zr.uniform_tensor(v.shape(), -0.2, 0.2);
  cn.params.zero_grads();
  ad::Var loss2 = loss_of();
  ad::backward(loss2);
  REQUIRE(cn.params.find("pose_embed.1.w")->has_grad());
  REQUIRE(max_abs(cn.params.find("pose_embed.1.w")->grad()) > 0.0);
  REQUIRE(max_abs(cn.params.find("conv_in.w")->grad()) > 0.0);
  REQUIRE(max_abs(cn.params.find("mid.res2.c2.w")->grad()) > 0.0);
}
