#include <catch2/catch_amalgamated.hpp>

#include "animlab/attention.hpp"
#include "helpers.hpp"

using namespace animlab;
using testutil::check_gradients;
namespace ad = animlab::ad;

using testutil::naive_attend;

namespace {

AttentionParams params_from(const Tensor& wq, const Tensor& wk, const Tensor& wv,
                            const Tensor& wo) {
  AttentionParams p;
  p.w_q = ad::Var::leaf(wq, false);
  p.w_k = ad::Var::leaf(wk, false);
  p.w_v = ad::Var::leaf(wv, false);
  p.w_out = ad::Var::leaf(wo, false);
  return p;
}

}  // namespace

TEST_CASE("sinusoidal position encoding values") {
  Tensor pe = sinusoidal_position_encoding(1, 4);
  REQUIRE(pe.shape() == Shape({1, 4}));
  REQUIRE(pe[0] == 0.0);
  REQUIRE(pe[1] == 1.0);
  REQUIRE(pe[2] == 0.0);
  REQUIRE(pe[3] == 1.0);

  Tensor pe2 = sinusoidal_position_encoding(2, 2);
  REQUIRE(pe2.at({1, 0}) == Catch::Approx(std::sin(1.0)).margin(1e-15));
  REQUIRE(pe2.at({1, 1}) == Catch::Approx(std::cos(1.0)).margin(1e-15));

  Tensor pe3 = sinusoidal_position_encoding(3, 4);
  REQUIRE(pe3.at({2, 2}) == Catch::Approx(std::sin(2.0 / 100.0)).margin(1e-15));
  REQUIRE(pe3.at({2, 3}) == Catch::Approx(std::cos(2.0 / 100.0)).margin(1e-15));

  REQUIRE_THROWS_AS(sinusoidal_position_encoding(4, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(sinusoidal_position_encoding(4, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(sinusoidal_position_encoding(0, 4), std::invalid_argument);
}

TEST_CASE("timestep embedding equals the PE row") {
  Tensor pe = sinusoidal_position_encoding(8, 6);
  Tensor e = sinusoidal_timestep_embedding(5, 6);
  for (int64_t i = 0; i < 6; ++i) REQUIRE(e[i] == pe.at({5, i}));
  REQUIRE_THROWS_AS(sinusoidal_timestep_embedding(-1, 6), std::invalid_argument);
}

TEST_CASE("temporal attention with zero output projection is the identity") {
  Rng r(31);
  auto f = r.normal_tensor({2, 4, 3, 2, 2});
  AttentionParams p = make_attention_params(r, 4, true);
  Tensor out = temporal_attention(ad::Var::leaf(f), p).val();
  REQUIRE(bit_equal(out, f));
}

TEST_CASE("temporal attention matches the naive oracle") {
  Rng r(32);
  int64_t n = 2, c = 4, k = 3, h = 2, w = 2;
  auto f = r.normal_tensor({n, c, k, h, w});
  auto wq = r.normal_tensor({c, c});
  auto wk = r.normal_tensor({c, c});
  auto wv = r.normal_tensor({c, c});
  auto wo = r.normal_tensor({c, c});
  Tensor got = temporal_attention(ad::Var::leaf(f), params_from(wq, wk, wv, wo)).val();
  Tensor pe = sinusoidal_position_encoding(k, c);
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        Tensor u({k, c});
        for (int64_t t = 0; t < k; ++t)
          for (int64_t ch = 0; ch < c; ++ch)
            u.at({t, ch}) = f.at({ni, ch, t, y, x}) + pe.at({t, ch});
        Tensor mixed = naive_attend(u, u, wq, wk, wv, wo);
        for (int64_t t = 0; t < k; ++t)
          for (int64_t ch = 0; ch < c; ++ch)
            REQUIRE(got.at({ni, ch, t, y, x}) ==
                    Catch::Approx(f.at({ni, ch, t, y, x}) + mixed.at({t, ch})).margin(1e-10));
      }
}

TEST_CASE("temporal attention single frame reduces to projection chain") {
  Rng r(33);
  int64_t c = 4;
  auto f = r.normal_tensor({1, c, 1, 2, 2});
  auto wq = r.normal_tensor({c, c});
  auto wk = r.normal_tensor({c, c});
  auto wv = r.normal_tensor({c, c});
  auto wo = r.normal_tensor({c, c});
  Tensor got = temporal_attention(ad::Var::leaf(f), params_from(wq, wk, wv, wo)).val();
  Tensor pe = sinusoidal_position_encoding(1, c);
  // K=1: softmax over one frame is 1, so out = f + Wo Wv (f + pe)
  for (int64_t y = 0; y < 2; ++y)
    for (int64_t x = 0; x < 2; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int64_t d = 0; d < c; ++d) {
          double vd = 0;
          for (int64_t j = 0; j < c; ++j)
            vd += wv.at({d, j}) * (f.at({0, j, 0, y, x}) + pe.at({0, j}));
          acc += wo.at({ch, d}) * vd;
        }
        REQUIRE(got.at({0, ch, 0, y, x}) ==
                Catch::Approx(f.at({0, ch, 0, y, x}) + acc).margin(1e-12));
      }
}

TEST_CASE("temporal attention touches only its own spatial location and batch item") {
  Rng r(34);
  auto f = r.normal_tensor({2, 4, 3, 2, 2});
  AttentionParams p = make_attention_params(r, 4, false);
  Tensor base = temporal_attention(ad::Var::leaf(f), p).val();
  Tensor f2 = f;
  for (int64_t ch = 0; ch < 4; ++ch) f2.at({1, ch, 0, 1, 0}) += 0.5;
  Tensor pert = temporal_attention(ad::Var::leaf(f2), p).val();
  double same_loc_delta = 0;
  for (int64_t ni = 0; ni < 2; ++ni)
    for (int64_t ch = 0; ch < 4; ++ch)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t y = 0; y < 2; ++y)
          for (int64_t x = 0; x < 2; ++x) {
            double d = std::abs(pert.at({ni, ch, t, y, x}) - base.at({ni, ch, t, y, x}));
            if (ni == 1 && y == 1 && x == 0)
              same_loc_delta += d;
            else
              REQUIRE(d == 0.0);  // other batch items and locations are untouched
          }
  REQUIRE(same_loc_delta > 0.0);
}

TEST_CASE("spatial attention without appearance tokens is plain self-attention") {
  Rng r(35);
  int64_t b = 2, c = 4, h = 2, w = 3;
  auto f = r.normal_tensor({b, c, h, w});
  auto wq = r.normal_tensor({c, c});
  auto wk = r.normal_tensor({c, c});
  auto wv = r.normal_tensor({c, c});
  auto wo = r.normal_tensor({c, c});
  Tensor got = spatial_hybrid_attention(ad::Var::leaf(f), params_from(wq, wk, wv, wo)).val();
  for (int64_t bi = 0; bi < b; ++bi) {
    Tensor tok({h * w, c});
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch) tok.at({y * w + x, ch}) = f.at({bi, ch, y, x});
    Tensor mixed = naive_attend(tok, tok, wq, wk, wv, wo);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch)
          REQUIRE(got.at({bi, ch, y, x}) ==
                  Catch::Approx(f.at({bi, ch, y, x}) + mixed.at({y * w + x, ch})).margin(1e-10));
  }
}

TEST_CASE("hybrid attention matches oracle over concatenated keys and values") {
  Rng r(36);
  int64_t b = 2, c = 4, h = 2, w = 2, sa = 3;
  auto f = r.normal_tensor({b, c, h, w});
  auto ya = r.normal_tensor({b, sa, c});
  auto wq = r.normal_tensor({c, c});
  auto wk = r.normal_tensor({c, c});
  auto wv = r.normal_tensor({c, c});
  auto wo = r.normal_tensor({c, c});
  Tensor got = spatial_hybrid_attention(ad::Var::leaf(f), params_from(wq, wk, wv, wo),
                                        ad::Var::leaf(ya))
                   .val();
  for (int64_t bi = 0; bi < b; ++bi) {
    Tensor tok({h * w, c});
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch) tok.at({y * w + x, ch}) = f.at({bi, ch, y, x});
    Tensor kv({h * w + sa, c});
    for (int64_t i = 0; i < h * w; ++i)
      for (int64_t ch = 0; ch < c; ++ch) kv.at({i, ch}) = tok.at({i, ch});
    for (int64_t i = 0; i < sa; ++i)
      for (int64_t ch = 0; ch < c; ++ch) kv.at({h * w + i, ch}) = ya.at({bi, i, ch});
    Tensor mixed = naive_attend(tok, kv, wq, wk, wv, wo);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch)
          REQUIRE(got.at({bi, ch, y, x}) ==
                  Catch::Approx(f.at({bi, ch, y, x}) + mixed.at({y * w + x, ch})).margin(1e-10));
  }
  // appearance tokens of one batch item never leak into another
  Tensor ya2 = ya;
  for (int64_t i = 0; i < sa; ++i)
    for (int64_t ch = 0; ch < c; ++ch) ya2.at({0, i, ch}) += 1.0;
  Tensor pert = spatial_hybrid_attention(ad::Var::leaf(f), params_from(wq, wk, wv, wo),
                                         ad::Var::leaf(ya2))
                    .val();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) REQUIRE(pert.at({1, ch, y, x}) == got.at({1, ch, y, x}));
}

TEST_CASE("attention shape validation") {
  Rng r(37);
  AttentionParams p = make_attention_params(r, 4, false);
  auto f5 = r.normal_tensor({1, 6, 2, 2, 2});
  REQUIRE_THROWS_AS(temporal_attention(ad::Var::leaf(f5), p), std::invalid_argument);
  auto f4 = r.normal_tensor({1, 4, 2, 2});
  auto bad_batch = r.normal_tensor({2, 3, 4});
  REQUIRE_THROWS_AS(spatial_hybrid_attention(ad::Var::leaf(f4), p, ad::Var::leaf(bad_batch)),
                    std::invalid_argument);
  auto bad_width = r.normal_tensor({1, 3, 6});
  REQUIRE_THROWS_AS(spatial_hybrid_attention(ad::Var::leaf(f4), p, ad::Var::leaf(bad_width)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(spatial_hybrid_attention(ad::Var::leaf(f5), p), std::invalid_argument);
}

TEST_CASE("gradients flow through both attention ops") {
  Rng r(38);
  int64_t c = 4;
  auto f = r.normal_tensor({1, c, 2, 2, 2});
  auto wq = r.normal_tensor({c, c});
  auto wk = r.normal_tensor({c, c});
  auto wv = r.normal_tensor({c, c});
  auto wo = r.normal_tensor({c, c});
  auto res = check_gradients(
      [&](std::vector<ad::Var>& v) {
        AttentionParams p{v[1], v[2], v[3], v[4]};
        auto o = temporal_attention(v[0], p);
        return ad::mean_all(ad::mul(o, o));
      },
      {f, wq, wk, wv, wo}, 1e-5, 32);
  REQUIRE(res.worst_rel < 1e-4);

  auto f4 = r.normal_tensor({1, c, 2, 2});
  auto ya = r.normal_tensor({1, 3, c});
  res = check_gradients(
      [&](std::vector<ad::Var>& v) {
        AttentionParams p{v[1], v[2], v[3], v[4]};
        auto o = spatial_hybrid_attention(v[0], p, v[5]);
        return ad::mean_all(ad::mul(o, o));
      },
      {f4, wq, wk, wv, wo, ya}, 1e-5, 32);
  REQUIRE(res.worst_rel < 1e-4);
}
