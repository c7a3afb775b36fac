// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers to run a subset.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mitodet/config.hpp"
#include "mitodet/evaluation.hpp"
#include "mitodet/pipeline.hpp"
#include "mitodet/random.hpp"
#include "mitodet/stain_translation.hpp"
#include "oracles.hpp"

using namespace mitodet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome metric_consistency() {
  const double f1 = f1_score(0.71, 0.41);
  const auto sym = prf(5, 5, 5);
  const bool ok = std::abs(f1 - 0.52) <= 0.005 && sym.f1 == 0.5;
  return {ok, fmt("F1(0.71, 0.41) = %.4f", f1)};
}

Outcome nms_oracle() {
  Rng rng(2024);
  int mismatches = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    std::vector<Detection> d;
    const auto n = rng.range(0, 200);
    for (long i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 300), y = rng.uniform(0, 300);
      // Every fifth instance uses coarse scores to exercise tie-breaking.
      const double s = inst % 5 == 0 ? static_cast<double>(rng.range(0, 3)) / 3.0 : rng.uniform();
      d.push_back({{x, y, x + rng.uniform(2, 60), y + rng.uniform(2, 60)}, s, 0});
    }
    if (nms(d, 0.1) != oracle::greedy_nms(d, 0.1)) ++mismatches;
  }
  return {mismatches == 0, fmt("%.0f/1000 instances differ", mismatches)};
}

Outcome matching_oracle() {
  Rng rng(99);
  const double radius = 30.0;
  int violations = 0, separated = 0, separated_equal = 0;
  for (int inst = 0; inst < 500; ++inst) {
    std::vector<ScoredPoint> dets;
    std::vector<Point> dp, truths;
    if (inst % 2 == 0) {
      const auto nd = rng.range(0, 12), nt = rng.range(0, 12);
      for (long i = 0; i < nd; ++i) dp.push_back({rng.uniform(0, 120), rng.uniform(0, 120)});
      for (long i = 0; i < nt; ++i) truths.push_back({rng.uniform(0, 120), rng.uniform(0, 120)});
    } else {
      const auto clusters = rng.range(1, 4);
      for (long c = 0; c < clusters; ++c) {
        const Point ctr{static_cast<double>(c) * 4 * radius, 0};
        auto near = [&] { return Point{ctr.x + rng.uniform(-5, 5), ctr.y + rng.uniform(-5, 5)}; };
        for (long i = rng.range(0, 3); i > 0 && dp.size() < 12; --i) dp.push_back(near());
        for (long i = rng.range(0, 3); i > 0 && truths.size() < 12; --i) truths.push_back(near());
      }
    }
    for (const auto& p : dp) dets.push_back({p, rng.uniform()});
    const auto tp = match_points(dets, truths, radius).true_positives;
    const auto best = oracle::optimal_matches(dp, truths, radius);
    if (tp > best) ++violations;

    std::vector<Point> all = dp;
    all.insert(all.end(), truths.begin(), truths.end());
    bool sep = true;
    for (std::size_t i = 0; i < all.size() && sep; ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j) {
        const double d = distance(all[i], all[j]);
        if (!(d < radius / 2 || d > 2 * radius)) {
          sep = false;
          break;
        }
      }
    if (sep) {
      ++separated;
      separated_equal += tp == best;
    }
  }
  const bool ok = violations == 0 && separated == separated_equal && separated > 0;
  return {ok, fmt("%.0f above oracle; %.0f/%.0f well-separated instances optimal", violations, separated_equal,
                  separated)};
}

Outcome tiling_soundness() {
  Rng rng(5);
  int uncovered = 0;
  for (int i = 0; i < 50; ++i) {
    const int tile = static_cast<int>(rng.range(8, 128));
    const int stride = static_cast<int>(rng.range(1, tile));
    const Extent e{rng.range(1, 500), rng.range(1, 500)};
    const auto g = build_grid(e, tile, stride);
    const auto cov = oracle::coverage(e, g.tiles);
    for (int c : cov) uncovered += c == 0;
  }
  int bad_trips = 0;
  for (int i = 0; i < 10000; ++i) {
    const FrameTransform t{{static_cast<double>(rng.range(-20000, 20000)), static_cast<double>(rng.range(-20000, 20000))},
                           1.0};
    const Point p{rng.uniform(-5000, 5000), rng.uniform(-5000, 5000)};
    const Point back = to_patch(to_slide(p, t), t);
    bad_trips += std::abs(back.x - p.x) > 1e-9 || std::abs(back.y - p.y) > 1e-9;
  }
  return {uncovered == 0 && bad_trips == 0, fmt("%.0f uncovered pixels, %.0f failed round trips", uncovered, bad_trips)};
}

Outcome gradient_checks() {
  Rng rng(6);
  auto random_input = [&] {
    std::vector<double> v(3 * 64);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return nn::constant({3, 8, 8}, v);
  };

  TranslationConfig tc;
  tc.generator_channels = 2;
  tc.generator_downsamplings = 1;
  tc.generator_res_blocks = 1;
  tc.discriminator_channels = 2;
  tc.discriminator_layers = 1;
  tc.seed = 1;
  const auto tm = TranslationModel::create(tc);
  const auto a = random_input();
  const auto gen = oracle::check_gradients(tm.generator_params(), [&] {
    return nn::add(nn::l1_mean(tm.g_ba.forward(tm.g_ab.forward(a)), a), nn::mse_to(tm.d_b.forward(tm.g_ab.forward(a)), 1.0));
  });

  DetectorConfig dc;
  dc.tile_size = 8;
  dc.feature_stride = 4;
  dc.anchor_sizes = {4.0};
  dc.anchor_ratios = {1.0};
  dc.backbone_channels = 2;
  dc.backbone_depth = 1;
  dc.head_channels = 2;
  dc.head_convs = 1;
  dc.seed = 2;
  const auto dm = DetectorModel::create(dc);
  const auto x = random_input();
  const std::vector<BoundingBox> truth{{1, 1, 5.5, 4.5}};
  const auto targets = encode_targets(generate_anchors(dc, 8), truth, dc.pos_iou, dc.neg_iou);
  const auto det = oracle::check_gradients(dm.params(), [&] { return detector_loss(dm, x, targets, 1.0).total; });

  ClassifierConfig cc;
  cc.crop_size = 8;
  cc.network_input = 8;
  cc.width = 2;
  cc.depth = 1;
  cc.seed = 3;
  const auto cm = ClassifierModel::create(cc);
  const auto y = random_input();
  const auto cls = oracle::check_gradients(cm.params(), [&] { return nn::softmax_cross_entropy(cm.forward(y), 1); });

  const bool ok = gen.max_rel < 1e-3 && det.max_rel < 1e-3 && cls.max_rel < 1e-3;
  return {ok, fmt("relative error generator %.2e, detector %.2e, classifier %.2e", gen.max_rel, det.max_rel,
                  cls.max_rel)};
}

Outcome encode_decode() {
  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double ax = rng.uniform(-50, 1000), ay = rng.uniform(-50, 1000);
    const BoundingBox anchor{ax, ay, ax + rng.uniform(8, 128), ay + rng.uniform(8, 128)};
    const double tx = rng.uniform(-50, 1000), ty = rng.uniform(-50, 1000);
    const BoundingBox box{tx, ty, tx + rng.uniform(1, 300), ty + rng.uniform(1, 300)};
    const auto back = decode_box(anchor, encode_box(anchor, box));
    worst = std::max({worst, std::abs(back.x_min - box.x_min), std::abs(back.y_min - box.y_min),
                      std::abs(back.x_max - box.x_max), std::abs(back.y_max - box.y_max)});
  }
  return {worst < 1e-6, fmt("max abs error %.2e px", worst)};
}

std::array<double, 3> channel_means(const std::vector<Raster>& images) {
  std::array<double, 3> m{};
  double n = 0;
  for (const auto& r : images) {
    for (int y = 0; y < r.height(); ++y)
      for (int x = 0; x < r.width(); ++x)
        for (int c = 0; c < 3; ++c) m[static_cast<std::size_t>(c)] += r.at(x, y, c);
    n += static_cast<double>(r.width()) * r.height();
  }
  for (auto& v : m) v /= n;
  return m;
}

Outcome translation_training() {
  const auto d = fixture::two_domains(8, 64, 41);
  auto cfg = desk_scale_config().translation;
  cfg.epochs = 30;
  cfg.seed = 42;
  const auto r = train_translation(d.a, d.b, cfg);
  const auto cyc = r.history.series("cycle");
  const double ratio = cyc.back() / cyc.front();

  std::vector<Raster> translated;
  for (const auto& img : d.a) translated.push_back(translate(img, r.model));
  const auto ma = channel_means(d.a), mb = channel_means(d.b), mt = channel_means(translated);
  double before = 0, after = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    before += std::abs(ma[c] - mb[c]) / 3;
    after += std::abs(mt[c] - mb[c]) / 3;
  }
  const double shrink = 1.0 - after / before;
  return {ratio < 0.5 && shrink >= 0.3,
          fmt("cycle loss at %.1f%% of initial; colour gap %.1f -> %.1f", 100 * ratio, before, after)};
}

Outcome detection_training() {
  const auto tiles = fixture::blob_tiles(200, 64, 51);
  const std::vector<DetectorSample> train(tiles.samples.begin(), tiles.samples.begin() + 150);
  auto cfg = desk_scale_config().detector;
  cfg.train_iterations = 500;
  cfg.seed = 52;
  const auto model = train_detector(train, cfg).model;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 150; i < 200; ++i) {
    std::vector<ScoredPoint> pts;
    for (const auto& det : detect(tiles.samples[i].tile, model)) pts.push_back({box_center(det.box), det.score});
    const auto m = match_points(pts, tiles.centers[i], 8.0);
    tp += m.true_positives;
    fp += m.false_positives;
    fn += m.false_negatives;
  }
  const auto s = prf(tp, fp, fn);
  std::ostringstream out;
  out << "held-out F1 " << s.f1 << " (TP " << tp << ", FP " << fp << ", FN " << fn << ")";
  return {s.f1 >= 0.9, out.str()};
}

Outcome end_to_end() {
  const auto trained = fixture::train_models(11);
  const SynthStyle style;
  Rng rng(61);
  std::ostringstream out;
  bool ok = true;

  const auto objs = place_objects(256, 256, 5, 5, style, 12, rng);
  const auto slide = render_slide(256, 256, objs, Scanner::kXR, style, rng.next());
  const auto res = run_slide("fixture", slide.image, trained.models, trained.config);
  std::vector<ScoredPoint> pts;
  for (const auto& m : res.mitoses) pts.push_back({m.point, m.probability});
  std::vector<Point> truth;
  for (const auto& o : objs)
    if (o.label == AnnotationLabel::kMitosis) truth.push_back(o.center);
  const auto m = match_points(pts, truth, 8.0);
  ok = ok && res.mitoses.size() == 5 && m.true_positives == 5;
  out << res.mitoses.size() << " points, " << m.true_positives << "/5 matched";

  // Translation tiles are 128 px, so these centres sit on tile seams.
  for (const Point c : {Point{128, 128}, Point{128, 64}, Point{64, 128}}) {
    const SynthObject blob{c, 8.0, 6.5, 0.4, AnnotationLabel::kMitosis};
    const auto seam = render_slide(256, 256, {blob}, Scanner::kS360, style, rng.next());
    const auto r = run_slide("seam", seam.image, trained.models, trained.config);
    const bool one = r.mitoses.size() == 1 && distance(r.mitoses[0].point, c) <= 8.0;
    ok = ok && one;
    out << "; seam (" << c.x << "," << c.y << ") -> " << r.mitoses.size() << " point(s)";
  }
  return {ok, out.str()};
}

Outcome determinism() {
  std::vector<std::string> failures;
  const auto d = fixture::two_domains(3, 32, 71);
  auto tc = desk_scale_config().translation;
  tc.patch_size = 32;
  tc.epochs = 2;
  tc.seed = 72;
  const auto t1 = train_translation(d.a, d.b, tc), t2 = train_translation(d.a, d.b, tc);
  if (!(t1.history == t2.history)) failures.push_back("train_translation");
  if (translate(d.a[0], t1.model) != translate(d.a[0], t1.model)) failures.push_back("translate");

  const auto tiles = fixture::blob_tiles(16, 64, 73);
  auto dc = desk_scale_config().detector;
  dc.train_iterations = 20;
  dc.seed = 74;
  const auto d1 = train_detector(tiles.samples, dc), d2 = train_detector(tiles.samples, dc);
  if (!(d1.history == d2.history)) failures.push_back("train_detector");
  dc.score_threshold = 0.005;
  if (detect(tiles.samples[0].tile, d1.model, dc) != detect(tiles.samples[0].tile, d2.model, dc))
    failures.push_back("detect");

  const auto crops = fixture::blob_ring_crops(40, 32, 75);
  auto cc = desk_scale_config().classifier;
  cc.epochs = 2;
  cc.seed = 76;
  const auto c1 = train_classifier(crops, cc), c2 = train_classifier(crops, cc);
  if (!(c1.history == c2.history)) failures.push_back("train_classifier");
  if (classify(crops[0].pixels, c1.model).probability != classify(crops[0].pixels, c2.model).probability)
    failures.push_back("classify");

  PipelineModels models{t1.model, d1.model, c1.model};
  auto pc = desk_scale_config();
  pc.detector.score_threshold = 0.005;
  pc.classifier.confidence_threshold = 0.0;
  Rng rng(77);
  const SynthStyle style;
  const auto img = render_slide(160, 160, place_objects(160, 160, 3, 3, style, 12, rng), Scanner::kCS2, style, 78).image;
  const auto r1 = run_slide("d", img, models, pc), r2 = run_slide("d", img, models, pc);
  if (r1.candidates != r2.candidates || r1.mitoses != r2.mitoses) failures.push_back("run_slide");

  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) ids.push_back("s" + std::to_string(i));
  const auto s1 = make_split(ids, 79), s2 = make_split(ids, 79);
  if (s1.train != s2.train || s1.test != s2.test) failures.push_back("make_split");

  std::string detail = failures.empty() ? "all entry points bit-identical across two runs" : "differs:";
  for (const auto& f : failures) detail += " " + f;
  return {failures.empty(), detail};
}

Outcome split_contract() {
  std::vector<std::string> ids;
  for (int i = 0; i < 150; ++i) ids.push_back("wsi" + std::to_string(i));
  const auto s = make_split(ids, 2021);
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  all.insert(s.test.begin(), s.test.end());
  const auto again = make_split(ids, 2021);
  const bool ok = s.test.size() == 45 && s.train.size() == 84 && s.validation.size() == 21 && all.size() == 150 &&
                  again.train == s.train && again.validation == s.validation && again.test == s.test;
  return {ok, fmt("test/train/validation = %.0f/%.0f/%.0f", static_cast<double>(s.test.size()),
                  static_cast<double>(s.train.size()), static_cast<double>(s.validation.size()))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {2, "metric internal consistency", metric_consistency},
      {3, "NMS oracle equivalence", nms_oracle},
      {4, "matching oracle", matching_oracle},
      {5, "coordinate and tiling soundness", tiling_soundness},
      {6, "gradient checks", gradient_checks},
      {7, "box encode/decode round trip", encode_decode},
      {8, "desk-scale translation", translation_training},
      {9, "desk-scale detection", detection_training},
      {10, "end-to-end pipeline", end_to_end},
      {11, "determinism", determinism},
      {12, "split contract", split_contract},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  criterion %2d  %-32s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
