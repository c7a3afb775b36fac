// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "doctest.h"
#include "fixtures.hpp"
#include "mitodet/config.hpp"
#include "mitodet/random.hpp"
#include "mitodet/stain_translation.hpp"
#include "oracles.hpp"

using namespace mitodet;

namespace {

TranslationConfig small_config(std::uint64_t seed) {
  auto c = desk_scale_config().translation;
  c.patch_size = 32;
  c.seed = seed;
  return c;
}

Raster noise_image(int w, int h, std::uint64_t seed) {
  Raster r(w, h);
  Rng rng(seed);
  for (auto& p : r.pixels()) p = static_cast<std::uint8_t>(rng.below(256));
  return r;
}

double mean_abs_planar(const Raster& a, const Raster& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i)
    s += std::abs(static_cast<double>(a.pixels()[i]) - static_cast<double>(b.pixels()[i])) / 127.5;
  return s / static_cast<double>(a.pixels().size());
}

nn::Var find(const nn::ParamList& p, const std::string& name) {
  for (const auto& [n, v] : p)
    if (n == name) return v;
  FAIL("missing parameter " << name);
  return nullptr;
}

}  // namespace

TEST_CASE("identity-initialized generators are exact identities") {
  auto cfg = small_config(1);
  cfg.identity_init = true;
  const auto model = TranslationModel::create(cfg);
  const Raster img = noise_image(32, 24, 2);
  CHECK(translate(img, model) == img);
  CHECK(translate(img, model, Direction::kBtoA) == img);
  const std::vector<Raster> batch{img};
  CHECK(cycle_loss(batch, batch, model) == 0.0);
}

TEST_CASE("translation preserves shape") {
  auto cfg = small_config(3);
  cfg.generator_channels = 2;
  cfg.generator_res_blocks = 1;
  const auto model = TranslationModel::create(cfg);
  const Raster big(1024, 1024, 200);
  const Raster out = translate(big, model);
  CHECK(out.width() == 1024);
  CHECK(out.height() == 1024);
  CHECK(translate(noise_image(40, 12, 4), model).width() == 40);
}

TEST_CASE("incompatible patch sizes name the divisor") {
  const auto model = TranslationModel::create(small_config(5));
  REQUIRE(model.g_ab.downsampling_factor() == 4);
  try {
    (void)translate(Raster(30, 32, 100), model);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("divisible by 4") != std::string::npos);
  }
}

TEST_CASE("cycle loss equals an elementwise recomputation") {
  const auto model = TranslationModel::create(small_config(6));
  const std::vector<Raster> a{noise_image(16, 16, 7), noise_image(16, 16, 8)};
  const std::vector<Raster> b{noise_image(16, 16, 9)};
  auto term = [](const std::vector<Raster>& batch, const Generator& g1, const Generator& g2) {
    double total = 0.0;
    for (const auto& r : batch) {
      const auto x = raster_to_planar(r);
      const auto rec = translate_planar(translate_planar(x, 16, 16, g1), 16, 16, g2);
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(rec[i] - x[i]);
      total += s / static_cast<double>(x.size());
    }
    return total / static_cast<double>(batch.size());
  };
  const double expected = term(a, model.g_ab, model.g_ba) + term(b, model.g_ba, model.g_ab);
  CHECK(expected > 0.0);
  CHECK(cycle_loss(a, b, model) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("opposite shifts cancel in the cycle") {
  auto cfg = small_config(10);
  cfg.identity_init = true;
  auto model = TranslationModel::create(cfg);
  const auto params = model.generator_params();
  for (int ch = 0; ch < 3; ++ch) {
    find(params, "g_ab.head.bias")->value[ch] = 0.25;
    find(params, "g_ba.head.bias")->value[ch] = -0.25;
  }
  // Mid-grey keeps the shifted values inside [-1, 1].
  Raster img(16, 16);
  Rng rng(11);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng.range(64, 191));
  const auto x = raster_to_planar(img);
  const auto shifted = translate_planar(x, 16, 16, model.g_ab);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(shifted[i] == doctest::Approx(x[i] + 0.25).epsilon(1e-12));
  const std::vector<Raster> batch{img};
  CHECK(cycle_loss(batch, batch, model) < 1e-12);
}

TEST_CASE("generator gradients match finite differences") {
  auto cfg = small_config(12);
  cfg.generator_channels = 2;
  cfg.generator_downsamplings = 1;
  cfg.generator_res_blocks = 1;
  const auto model = TranslationModel::create(cfg);
  Rng rng(13);
  std::vector<double> pa(3 * 64), pb(3 * 64);
  for (auto& v : pa) v = rng.uniform(-1, 1);
  for (auto& v : pb) v = rng.uniform(-1, 1);
  const auto a = nn::constant({3, 8, 8}, pa);
  const auto b = nn::constant({3, 8, 8}, pb);
  auto loss = [&] {
    auto cyc = nn::add(nn::l1_mean(model.g_ba.forward(model.g_ab.forward(a)), a),
                       nn::l1_mean(model.g_ab.forward(model.g_ba.forward(b)), b));
    auto adv = nn::mse_to(model.d_b.forward(model.g_ab.forward(a)), 1.0);
    return nn::add(nn::scale(cyc, 10.0), adv);
  };
  const auto r = oracle::check_gradients(model.generator_params(), loss);
  CHECK(r.checked == nn::parameter_count(model.generator_params()));
  CHECK(r.max_rel < 1e-3);
}

TEST_CASE("image pool") {
  Rng rng(14);
  ImagePool pass(1);
  for (int i = 0; i < 5; ++i) {
    const std::vector<double> img(4, static_cast<double>(i));
    CHECK(pass.query(img, rng) == img);
  }
  CHECK(pass.size() == 0);

  ImagePool pool(3);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> img(2, static_cast<double>(i));
    const auto out = pool.query(img, rng);
    CHECK(pool.size() <= 3);
    // Whatever comes back was inserted at some point, never invented.
    CHECK(out[0] <= static_cast<double>(i));
    CHECK(out[0] == out[1]);
    if (i < 3) CHECK(out == img);
  }
}

TEST_CASE("training on identical domains stays close to the identity") {
  const auto d = fixture::two_domains(6, 32, 15);
  auto cfg = small_config(16);
  cfg.epochs = 60;
  const auto result = train_translation(d.b, d.b, cfg);
  double gap = 0.0;
  for (const auto& img : d.b) gap += mean_abs_planar(translate(img, result.model), img);
  gap /= static_cast<double>(d.b.size());
  CHECK(gap < 0.15);
  const auto cyc = result.history.series("cycle");
  CHECK(cyc.size() == 61);
  CHECK(cyc.back() < cyc.front());
}

TEST_CASE("translation training is deterministic") {
  const auto d = fixture::two_domains(3, 32, 17);
  auto cfg = small_config(18);
  cfg.epochs = 2;
  const auto r1 = train_translation(d.a, d.b, cfg);
  const auto r2 = train_translation(d.a, d.b, cfg);
  CHECK(r1.history == r2.history);
  CHECK(nn::snapshot(r1.model.all_params()) == nn::snapshot(r2.model.all_params()));
  CHECK(translate(d.a[0], r1.model) == translate(d.a[0], r2.model));
}

TEST_CASE("translation training rejects bad inputs") {
  const auto d = fixture::two_domains(2, 32, 19);
  const auto cfg = small_config(20);
  CHECK_THROWS_AS(train_translation({}, d.b, cfg), std::invalid_argument);
  const std::vector<Raster> wrong{Raster(48, 48, 100)};
  CHECK_THROWS_AS(train_translation(wrong, d.b, cfg), std::invalid_argument);
}

TEST_CASE("translation checkpoint round trip") {
  const auto model = TranslationModel::create(small_config(21));
  const auto back = TranslationModel::from_checkpoint(model.to_checkpoint({}, 0));
  CHECK(nn::snapshot(back.all_params()) == nn::snapshot(model.all_params()));
  const Raster img = noise_image(32, 32, 22);
  CHECK(translate(img, back) == translate(img, model));
}
