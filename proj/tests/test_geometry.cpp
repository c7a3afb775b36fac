// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mitodet/geometry.hpp"
#include "mitodet/random.hpp"
#include "oracles.hpp"

using namespace mitodet;

namespace {

BoundingBox random_int_box(Rng& rng, int span, int max_side) {
  const double x = static_cast<double>(rng.range(0, span));
  const double y = static_cast<double>(rng.range(0, span));
  return {x, y, x + static_cast<double>(rng.range(1, max_side)), y + static_cast<double>(rng.range(1, max_side))};
}

std::vector<Detection> random_dets(Rng& rng, std::size_t n, bool coarse_scores) {
  std::vector<Detection> d;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(0, 200), y = rng.uniform(0, 200);
    const double score = coarse_scores ? static_cast<double>(rng.range(0, 4)) / 4.0 : rng.uniform();
    d.push_back({{x, y, x + rng.uniform(2, 40), y + rng.uniform(2, 40)}, score, 0});
  }
  return d;
}

}  // namespace

TEST_CASE("iou examples") {
  const BoundingBox b{0, 0, 10, 10};
  CHECK(iou(b, b) == 1.0);
  CHECK(iou(b, {20, 20, 30, 30}) == 0.0);
  CHECK(iou(b, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
  CHECK(oracle::pixel_iou(b, {5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // Touching edges share no area.
  CHECK(iou(b, {10, 0, 20, 10}) == 0.0);
}

TEST_CASE("iou matches pixel counting on integer boxes") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_int_box(rng, 30, 25);
    const auto b = random_int_box(rng, 30, 25);
    const double v = iou(a, b);
    CHECK(v == doctest::Approx(oracle::pixel_iou(a, b)).epsilon(1e-12));
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK((v == 1.0) == (a == b));
  }
}

TEST_CASE("make_box rejects degenerate boxes") {
  CHECK_THROWS_AS(make_box(0, 0, 0, 5), std::invalid_argument);
  CHECK_THROWS_AS(make_box(0, 0, 5, -1), std::invalid_argument);
  CHECK_THROWS_AS(make_box(0, 0, NAN, 5), std::invalid_argument);
  CHECK(make_box(1, 2, 3, 4) == BoundingBox{1, 2, 3, 4});
}

TEST_CASE("nms trivial cases") {
  CHECK(nms({}, 0.1).empty());
  const std::vector<Detection> one{{{0, 0, 5, 5}, 0.4, 0}};
  CHECK(nms(one, 0.1) == one);
}

TEST_CASE("nms keeps the best of overlapping boxes") {
  const std::vector<Detection> d{{{0, 0, 10, 10}, 0.5, 0}, {{1, 1, 11, 11}, 0.9, 0}, {{50, 50, 60, 60}, 0.3, 0}};
  const auto kept = nms(d, 0.1);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == d[1]);
  CHECK(kept[1] == d[2]);
}

TEST_CASE("nms tie-break: lower x_min, then lower y_min") {
  const std::vector<Detection> d{{{5, 0, 15, 10}, 0.5, 0}, {{0, 3, 10, 13}, 0.5, 0}, {{0, 1, 10, 11}, 0.5, 0}};
  const auto kept = nms(d, 0.05);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0] == d[2]);
  const auto order = score_order(d);
  CHECK(order == std::vector<std::size_t>{2, 1, 0});
}

TEST_CASE("nms equals the brute-force greedy oracle") {
  Rng rng(7);
  for (int inst = 0; inst < 300; ++inst) {
    const auto d = random_dets(rng, rng.range(0, 200), inst % 3 == 0);
    const double thr = inst % 4 == 0 ? rng.uniform() : 0.1;
    CHECK(nms(d, thr) == oracle::greedy_nms(d, thr));
  }
}

TEST_CASE("nms properties") {
  Rng rng(11);
  for (int inst = 0; inst < 50; ++inst) {
    const auto d = random_dets(rng, 120, false);
    const auto kept = nms(d, 0.1);
    for (const auto& k : kept) CHECK(std::find(d.begin(), d.end(), k) != d.end());
    for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i - 1].score >= kept[i].score);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) CHECK(iou(kept[i].box, kept[j].box) <= 0.1);
    CHECK(nms(kept, 0.1) == kept);

    const auto all = nms(d, 1.0);
    CHECK(all.size() == d.size());
    const auto apart = nms(d, 0.0);
    for (std::size_t i = 0; i < apart.size(); ++i)
      for (std::size_t j = i + 1; j < apart.size(); ++j) CHECK(iou(apart[i].box, apart[j].box) == 0.0);
  }
}

TEST_CASE("frame transforms") {
  CHECK(to_slide({0, 0}, {{512, 768}, 1.0}) == Point{512, 768});
  CHECK(to_slide({10, 10}, {{0, 0}, 2.0}) == Point{20, 20});
  CHECK(to_patch({20, 20}, {{0, 0}, 2.0}) == Point{10, 10});

  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const FrameTransform t{{static_cast<double>(rng.range(-5000, 5000)), static_cast<double>(rng.range(-5000, 5000))},
                           1.0};
    const Point p{static_cast<double>(rng.range(-100000, 100000)), static_cast<double>(rng.range(-100000, 100000))};
    REQUIRE(to_patch(to_slide(p, t), t) == p);
    REQUIRE(to_slide(to_patch(p, t), t) == p);
  }
}

TEST_CASE("nested transforms compose associatively") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    auto rnd = [&] {
      return FrameTransform{{static_cast<double>(rng.range(-512, 512)), static_cast<double>(rng.range(-512, 512))},
                            static_cast<double>(1 << rng.range(0, 2))};
    };
    const auto a = rnd(), b = rnd(), c = rnd();
    const Point p{static_cast<double>(rng.range(-64, 64)), static_cast<double>(rng.range(-64, 64))};
    const Point direct = to_slide(to_slide(to_slide(p, c), b), a);
    CHECK(to_slide(p, a.compose(b).compose(c)) == direct);
    CHECK(to_slide(p, a.compose(b.compose(c))) == direct);
  }
}

TEST_CASE("box_center") {
  CHECK(box_center({0, 0, 50, 50}) == Point{25, 25});
  CHECK(box_center({10, 20, 60, 70}) == Point{35, 45});
  CHECK(box_center({0, 0, 1, 1}) == Point{0.5, 0.5});
}

TEST_CASE("round half up") {
  CHECK(round_half_up(2.5) == 3);
  CHECK(round_half_up(-2.5) == -2);
  CHECK(round_half_up(2.4999) == 2);
  CHECK(round_half_up(-0.5) == 0);
  CHECK(to_pixel({1.5, -1.5}) == PixelIndex{2, -1});
}

TEST_CASE("clip and translate boxes") {
  CHECK(clip_box({-5, -5, 20, 30}, 10, 25) == BoundingBox{0, 0, 10, 25});
  CHECK(!clip_box({20, 20, 30, 30}, 10, 10).valid());
  CHECK(translate_box({1, 2, 3, 4}, {10, -2}) == BoundingBox{11, 0, 13, 2});
  CHECK(box_around({25, 25}, 50) == BoundingBox{0, 0, 50, 50});
}
