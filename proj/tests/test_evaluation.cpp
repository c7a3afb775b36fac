// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "mitodet/evaluation.hpp"
#include "mitodet/random.hpp"
#include "oracles.hpp"

using namespace mitodet;

namespace {

struct Instance {
  std::vector<ScoredPoint> dets;
  std::vector<Point> det_points;
  std::vector<Point> truths;
};

Instance random_instance(Rng& rng, double extent) {
  Instance in;
  const auto nd = rng.range(0, 12), nt = rng.range(0, 12);
  for (long i = 0; i < nd; ++i) {
    const Point p{rng.uniform(0, extent), rng.uniform(0, extent)};
    in.dets.push_back({p, rng.uniform()});
    in.det_points.push_back(p);
  }
  for (long i = 0; i < nt; ++i) in.truths.push_back({rng.uniform(0, extent), rng.uniform(0, extent)});
  return in;
}

// Points scattered around a few far-apart cluster centres.
Instance clustered_instance(Rng& rng, double radius) {
  Instance in;
  const int clusters = static_cast<int>(rng.range(1, 5));
  for (int c = 0; c < clusters; ++c) {
    const Point ctr{c * 4.0 * radius, rng.uniform(0, radius)};
    auto jitter = [&] {
      return Point{ctr.x + rng.uniform(-0.17, 0.17) * radius, ctr.y + rng.uniform(-0.17, 0.17) * radius};
    };
    for (long i = rng.range(0, 3); i > 0; --i) {
      const Point p = jitter();
      in.dets.push_back({p, rng.uniform()});
      in.det_points.push_back(p);
    }
    for (long i = rng.range(0, 3); i > 0; --i) in.truths.push_back(jitter());
  }
  return in;
}

bool well_separated(const Instance& in, double radius) {
  std::vector<Point> all = in.det_points;
  all.insert(all.end(), in.truths.begin(), in.truths.end());
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const double d = std::hypot(all[i].x - all[j].x, all[i].y - all[j].y);
      if (!(d < radius / 2 || d > 2 * radius)) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("f1 examples") {
  CHECK(f1_score(0.71, 0.41) == doctest::Approx(0.5198).epsilon(1e-4));
  const auto m = prf(5, 5, 5);
  CHECK(m.precision == 0.5);
  CHECK(m.recall == 0.5);
  CHECK(m.f1 == 0.5);
  const auto z = prf(0, 0, 0);
  CHECK(z.precision == 0.0);
  CHECK(z.recall == 0.0);
  CHECK(z.f1 == 0.0);
  CHECK(prf(0, 3, 0).f1 == 0.0);
  CHECK(f1_score(0.0, 0.0) == 0.0);
}

TEST_CASE("matching basics") {
  const std::vector<ScoredPoint> dets{{{0, 0}, 0.9}, {{10, 0}, 0.8}, {{100, 100}, 0.7}};
  const std::vector<Point> truths{{5, 0}, {12, 0}};
  const auto m = match_points(dets, truths, 30);
  CHECK(m.true_positives == 2);
  CHECK(m.false_positives == 1);
  CHECK(m.false_negatives == 0);
  REQUIRE(m.pairs.size() == 2);
  // The highest-scored detection takes its nearest truth first.
  CHECK(m.pairs[0].detection == 0);
  CHECK(m.pairs[0].truth == 0);
  CHECK(m.pairs[1].truth == 1);
  // Exactly at the radius counts.
  const std::vector<ScoredPoint> edge{{{30, 0}, 1.0}};
  const std::vector<Point> origin{{0, 0}};
  CHECK(match_points(edge, origin, 30).true_positives == 1);
}

TEST_CASE("greedy matching against the optimal-assignment oracle") {
  Rng rng(3);
  const double radius = 30;
  int separated = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const auto in = inst % 2 ? random_instance(rng, 120) : clustered_instance(rng, radius);
    const auto m = match_points(in.dets, in.truths, radius);
    const auto best = oracle::optimal_matches(in.det_points, in.truths, radius);
    CHECK(m.true_positives <= best);
    CHECK(m.true_positives + m.false_positives == in.dets.size());
    CHECK(m.true_positives + m.false_negatives == in.truths.size());
    if (well_separated(in, radius)) {
      ++separated;
      CHECK(m.true_positives == best);
    }
  }
  CHECK(separated >= 200);
}

TEST_CASE("matching properties") {
  Rng rng(4);
  for (int inst = 0; inst < 200; ++inst) {
    auto in = random_instance(rng, 150);
    const auto m = match_points(in.dets, in.truths, 20);
    CHECK(match_points(in.dets, in.truths, 40).true_positives >= m.true_positives);
    CHECK_THROWS_AS(match_points(in.dets, in.truths, 0.0), std::invalid_argument);
    std::vector<Point> rev(in.truths.rbegin(), in.truths.rend());
    CHECK(match_points(in.dets, rev, 20).true_positives <= oracle::optimal_matches(in.det_points, rev, 20));
    std::vector<ScoredPoint> shuffled = in.dets;
    rng.shuffle(std::span<ScoredPoint>(shuffled));
    CHECK(match_points(shuffled, in.truths, 20).true_positives == m.true_positives);
    for (const auto& p : m.pairs) CHECK(p.distance <= 20.0);
  }
}

TEST_CASE("dataset evaluation") {
  std::map<std::string, std::vector<ScoredPoint>> dets{{"a", {{{0, 0}, 0.9}, {{200, 0}, 0.5}}},
                                                       {"b", {{{50, 50}, 0.8}}}};
  const std::map<std::string, std::vector<Point>> truths{{"a", {{3, 4}}}, {"b", {{52, 50}, {400, 400}}}, {"c", {{1, 1}}}};
  const auto r = evaluate_dataset(dets, truths, {30, true});
  REQUIRE(r.slides.size() == 3);
  CHECK(r.slides[0].slide_id == "a");
  CHECK(r.slides[2].slide_id == "c");
  CHECK(r.slides[2].fn == 1);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& s : r.slides) {
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
  }
  CHECK(r.aggregate.slide_id == "ALL");
  CHECK(r.aggregate.tp == tp);
  CHECK(r.aggregate.fp == fp);
  CHECK(r.aggregate.fn == fn);
  CHECK(tp == 2);
  CHECK(fp == 1);
  CHECK(fn == 2);
  const auto expected = prf(tp, fp, fn);
  CHECK(r.aggregate.metrics.f1 == expected.f1);

  std::ostringstream csv;
  write_report_csv(r, csv);
  const std::string text = csv.str();
  CHECK(text.rfind("slide_id,TP,FP,FN,P,R,F1\n", 0) == 0);
  CHECK(text.find("\nALL,2,1,2,") != std::string::npos);
  std::ostringstream table;
  write_report_table(r, table);
  CHECK(table.str().find("ALL") != std::string::npos);

  dets["zzz"] = {{{1, 1}, 0.5}};
  CHECK_THROWS_AS(evaluate_dataset(dets, truths, {30, true}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_dataset({}, truths, {-1, true}), std::invalid_argument);
}
