// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

#include <unistd.h>

#include "mitodet/stain_translation.hpp"

namespace mitodet::fixture {

namespace {

constexpr Scanner kDomainA[] = {Scanner::kXR, Scanner::kS360, Scanner::kCS2};

}  // namespace

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("mitodet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Domains two_domains(int per_domain, int size, std::uint64_t seed) {
  Domains d;
  Rng rng(seed);
  const SynthStyle style;
  for (int i = 0; i < per_domain; ++i) {
    auto objs = place_objects(size, size, 1, 0, style, 4, rng);
    d.a.push_back(render_slide(size, size, objs, kDomainA[i % 3], style, rng.next()).image);
    objs = place_objects(size, size, 1, 0, style, 4, rng);
    d.b.push_back(render_slide(size, size, objs, Scanner::kGT450, style, rng.next()).image);
  }
  return d;
}

BlobTiles blob_tiles(int count, int size, std::uint64_t seed) {
  BlobTiles t;
  Rng rng(seed);
  const SynthStyle style;
  for (int i = 0; i < count; ++i) {
    const int n = static_cast<int>(rng.below(3));
    const auto objs = place_objects(size, size, n, 0, style, 2, rng);
    DetectorSample s;
    s.tile = render_slide(size, size, objs, kDomainA[i % 3], style, rng.next()).image;
    std::vector<Point> centers;
    for (const auto& o : objs) {
      s.truth.push_back(o.box());
      centers.push_back(o.center);
    }
    t.samples.push_back(std::move(s));
    t.centers.push_back(std::move(centers));
  }
  return t;
}

std::vector<LabeledCrop> blob_ring_crops(int count, int crop_size, std::uint64_t seed) {
  std::vector<LabeledCrop> out;
  Rng rng(seed);
  const SynthStyle style;
  for (int i = 0; i < count; ++i) {
    SynthObject o;
    o.label = i % 2 == 0 ? AnnotationLabel::kMitosis : AnnotationLabel::kHardNegative;
    o.radius_x = rng.uniform(style.blob_radius_min, style.blob_radius_max);
    o.radius_y = o.radius_x * (o.label == AnnotationLabel::kMitosis ? rng.uniform(0.7, 1.0) : rng.uniform(0.85, 1.0));
    o.angle = rng.uniform(0.0, std::numbers::pi);
    o.center = {crop_size / 2.0 + rng.uniform(-2.0, 2.0), crop_size / 2.0 + rng.uniform(-2.0, 2.0)};
    LabeledCrop c;
    c.pixels = render_slide(crop_size, crop_size, {o}, kDomainA[(i / 2) % 3], style, rng.next()).image;
    c.label = o.label == AnnotationLabel::kMitosis ? CropLabel::kMitosis : CropLabel::kNonMitosis;
    c.slide_id = "crop" + std::to_string(i);
    c.center = o.center;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Annotation> annotations_for(const std::string& slide_id, const std::vector<SynthObject>& objects) {
  std::vector<Annotation> out;
  for (const auto& o : objects) out.push_back({slide_id, o.box(), o.label});
  return out;
}

TrainedModels train_models(std::uint64_t seed, int translation_epochs) {
  TrainedModels t;
  t.config = desk_scale_config();
  t.config.translation.epochs = translation_epochs;
  t.config.translation.seed = seed + 1;
  t.config.detector.seed = seed + 2;
  t.config.classifier.seed = seed + 3;
  const auto& tiling = t.config.tiling;
  const int patch = t.config.translation.patch_size;
  const SynthStyle style;
  Rng rng(seed);

  struct Slide {
    std::string id;
    Raster image;
    std::vector<Annotation> annotations;
  };
  std::vector<Slide> train;
  std::vector<Raster> a, b;
  for (int i = 0; i < 6; ++i) {
    const auto objs = place_objects(192, 192, 4, 4, style, 12, rng);
    Slide s{"train" + std::to_string(i), render_slide(192, 192, objs, kDomainA[i % 3], style, rng.next()).image, {}};
    s.annotations = annotations_for(s.id, objs);
    for (auto& p : translation_patches(s.image, patch, tiling))
      if (a.size() < 12) a.push_back(std::move(p));
    train.push_back(std::move(s));
  }
  for (int i = 0; i < 2; ++i) {
    const auto objs = place_objects(192, 192, 4, 4, style, 12, rng);
    const auto img = render_slide(192, 192, objs, Scanner::kGT450, style, rng.next()).image;
    for (auto& p : translation_patches(img, patch, tiling))
      if (b.size() < 12) b.push_back(std::move(p));
  }
  t.models.translation = train_translation(a, b, t.config.translation).model;

  std::vector<DetectorSample> tiles;
  std::vector<LabeledCrop> crops;
  for (const auto& s : train) {
    const auto translated = translate_slide(s.image, t.models.translation, tiling);
    for (auto& d : detector_samples(translated.canvas, s.annotations, t.config.detector.tile_size,
                                    tiling.detection_stride))
      tiles.push_back(std::move(d));
    for (auto& c : classifier_crops(translated.canvas, s.id, s.annotations, t.config.classifier))
      crops.push_back(std::move(c));
  }
  t.models.detector = train_detector(tiles, t.config.detector).model;
  t.models.classifier = train_classifier(crops, t.config.classifier).model;
  return t;
}

}  // namespace mitodet::fixture
