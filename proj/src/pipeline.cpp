// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "mitodet/checkpoint.hpp"
#include "mitodet/hash.hpp"
#include "mitodet/random.hpp"

namespace mitodet {

const PipelineCache::Translated* PipelineCache::find_translation(std::uint64_t key) const {
  const auto it = translation_.find(key);
  return it == translation_.end() ? nullptr : &it->second;
}

void PipelineCache::store_translation(std::uint64_t key, Translated value) { translation_[key] = std::move(value); }

const std::vector<Detection>* PipelineCache::find_detection(std::uint64_t key) const {
  const auto it = detection_.find(key);
  return it == detection_.end() ? nullptr : &it->second;
}

void PipelineCache::store_detection(std::uint64_t key, std::vector<Detection> value) {
  detection_[key] = std::move(value);
}

void PipelineCache::clear() {
  translation_.clear();
  detection_.clear();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t translation_key(const Raster& image, const PipelineModels& models, const PipelineConfig& cfg) {
  Fnv1a h;
  h.update_pod(image.width());
  h.update_pod(image.height());
  h.update(image.pixels().data(), image.pixels().size());
  h.update_pod(params_fingerprint(models.translation.generator_params()));
  h.update_pod(cfg.tiling.translation_tile);
  h.update_pod(cfg.tiling.translation_stride);
  h.update_pod(cfg.tiling.min_tissue_fraction);
  h.update_pod(cfg.tiling.background_level);
  return h.digest();
}

std::uint64_t detection_key(std::uint64_t upstream, const PipelineModels& models, const PipelineConfig& cfg) {
  Fnv1a h;
  h.update_pod(upstream);
  h.update_pod(params_fingerprint(models.detector.params()));
  h.update_pod(cfg.detector.tile_size);
  h.update_pod(cfg.detector.score_threshold);
  h.update_pod(cfg.detector.nms_iou);
  h.update_pod(cfg.tiling.detection_stride);
  h.update_pod(cfg.merge_nms_iou);
  return h.digest();
}

void check_models(const PipelineModels& models, const PipelineConfig& cfg) {
  if (models.detector.params().empty()) throw StageError("detection", "detector model is empty");
  if (models.classifier.params().empty()) throw StageError("classification", "classifier model is empty");
  if (models.translation.generator_params().empty()) throw StageError("translation", "translation model is empty");
  if (cfg.tiling.translation_tile % models.translation.g_ab.downsampling_factor() != 0) {
    throw StageError("translation", "translation tile not divisible by the generator downsampling factor");
  }
  if (models.classifier.config().crop_size != cfg.classifier.crop_size) {
    throw StageError("classification", "classifier was trained with crop_size " +
                                           std::to_string(models.classifier.config().crop_size));
  }
}

PipelineCache::Translated run_translation(const Raster& image, const TranslationModel& model,
                                          const TilingConfig& tiling, StageTimings* timings) {
  PipelineCache::Translated out;
  auto t0 = Clock::now();
  const Extent extent{image.width(), image.height()};
  const TileGrid grid = build_grid(extent, tiling.translation_tile, tiling.translation_stride);
  out.tiles_total = grid.tiles.size();
  std::vector<Raster> patches;
  for (const TileSpec& t : grid.tiles) {
    Raster tile = extract_tile(image, t);
    if (tissue_fraction(tile, tiling.background_level) < tiling.min_tissue_fraction) continue;
    out.kept.push_back(t);
    patches.push_back(std::move(tile));
  }
  if (timings) timings->tiling += seconds_since(t0);

  t0 = Clock::now();
  out.canvas = image;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    patches[i] = translate(patches[i], model, Direction::kAtoB);
    paste(out.canvas, patches[i], out.kept[i].origin.x, out.kept[i].origin.y);
  }
  if (timings) timings->translation += seconds_since(t0);
  return out;
}

/// Half-open ownership interval of each tile along one axis: overlaps are
/// split at their midpoint so every slide position has exactly one owner.
std::vector<std::pair<double, double>> core_intervals(const std::vector<long>& pos, int size) {
  std::vector<std::pair<double, double>> out(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    out[i].first = i == 0 ? -std::numeric_limits<double>::infinity() : 0.5 * (pos[i] + pos[i - 1] + size);
    out[i].second =
        i + 1 == pos.size() ? std::numeric_limits<double>::infinity() : 0.5 * (pos[i + 1] + pos[i] + size);
  }
  return out;
}

bool overlaps_any(const TileSpec& t, const std::vector<TileSpec>& kept) {
  return std::any_of(kept.begin(), kept.end(), [&](const TileSpec& k) {
    return t.origin.x < k.origin.x + k.size && k.origin.x < t.origin.x + t.size && t.origin.y < k.origin.y + k.size &&
           k.origin.y < t.origin.y + t.size;
  });
}

std::vector<Detection> run_detection(const PipelineCache::Translated& tr, const PipelineModels& models,
                                     const PipelineConfig& cfg) {
  const int det = cfg.detector.tile_size;
  const Extent extent{tr.canvas.width(), tr.canvas.height()};
  const double w = static_cast<double>(extent.width);
  const double h = static_cast<double>(extent.height);
  // Overlapping grid over the stitched canvas, so objects on translation
  // tile seams are seen whole by at least one detection tile.
  const auto xs = axis_positions(extent.width, det, cfg.tiling.detection_stride);
  const auto ys = axis_positions(extent.height, det, cfg.tiling.detection_stride);
  const auto cx = core_intervals(xs, det);
  const auto cy = core_intervals(ys, det);
  std::vector<Detection> all;
  for (std::size_t iy = 0; iy < ys.size(); ++iy) {
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
      const TileSpec spec{{xs[ix], ys[iy]}, det, 0};
      if (!overlaps_any(spec, tr.kept)) continue;
      const Raster tile = crop_reflect(tr.canvas, spec.origin.x, spec.origin.y, det, det);
      if (tissue_fraction(tile, cfg.tiling.background_level) < cfg.tiling.min_tissue_fraction) continue;
      const FrameTransform to_slide_frame = spec.transform();
      for (const Detection& d : detect(tile, models.detector, cfg.detector)) {
        const Point lo = to_slide({d.box.x_min, d.box.y_min}, to_slide_frame);
        const Point hi = to_slide({d.box.x_max, d.box.y_max}, to_slide_frame);
        const BoundingBox b = clip_box({lo.x, lo.y, hi.x, hi.y}, w, h);
        if (!b.valid()) continue;
        const Point c = box_center(b);
        if (c.x < cx[ix].first || c.x >= cx[ix].second || c.y < cy[iy].first || c.y >= cy[iy].second) continue;
        all.push_back({b, d.score, d.class_id});
      }
    }
  }
  return nms(all, cfg.merge_nms_iou);
}

}  // namespace

PipelineCache::Translated translate_slide(const Raster& image, const TranslationModel& model, const TilingConfig& tiling) {
  tiling.validate();
  if (image.empty()) throw std::invalid_argument("translate_slide: empty image");
  return run_translation(image, model, tiling, nullptr);
}

SlideResult run_slide(const std::string& slide_id, const Raster& image, const PipelineModels& models,
                      const PipelineConfig& cfg, PipelineCache* cache) {
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw StageError("config", e.what());
  }
  if (image.empty()) throw StageError("tiling", "slide '" + slide_id + "' has an empty image");
  check_models(models, cfg);

  SlideResult result;
  result.slide_id = slide_id;
  result.extent = {image.width(), image.height()};

  const std::uint64_t tkey = translation_key(image, models, cfg);
  PipelineCache::Translated local;
  const PipelineCache::Translated* tr = cache ? cache->find_translation(tkey) : nullptr;
  if (tr) {
    result.translation_cached = true;
  } else {
    try {
      local = run_translation(image, models.translation, cfg.tiling, &result.timings);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError("translation", e.what());
    }
    if (cache) {
      cache->store_translation(tkey, local);
      tr = cache->find_translation(tkey);
    } else {
      tr = &local;
    }
  }
  result.tiles_total = tr->tiles_total;
  result.tiles_kept = tr->kept.size();

  auto t0 = Clock::now();
  const std::uint64_t dkey = detection_key(tkey, models, cfg);
  if (const auto* hit = cache ? cache->find_detection(dkey) : nullptr) {
    result.candidates = *hit;
    result.detection_cached = true;
  } else {
    try {
      result.candidates = run_detection(*tr, models, cfg);
    } catch (const std::exception& e) {
      throw StageError("detection", e.what());
    }
    if (cache) cache->store_detection(dkey, result.candidates);
  }
  result.timings.detection += seconds_since(t0);

  t0 = Clock::now();
  try {
    const Raster& source = cfg.crops_from_translated ? tr->canvas : image;
    for (const Detection& d : result.candidates) {
      const Point c = box_center(d.box);
      const Classification k =
          classify(make_crop(source, c, cfg.classifier.crop_size), models.classifier, cfg.classifier.confidence_threshold);
      if (k.is_mitosis) result.mitoses.push_back({c, k.probability});
    }
  } catch (const std::exception& e) {
    throw StageError("classification", e.what());
  }
  std::stable_sort(result.mitoses.begin(), result.mitoses.end(), [](const MitosisPoint& a, const MitosisPoint& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    if (a.point.x != b.point.x) return a.point.x < b.point.x;
    return a.point.y < b.point.y;
  });
  result.timings.classification += seconds_since(t0);
  return result;
}

// ---------------------------------------------------------------------------

std::vector<Raster> translation_patches(const Raster& image, int patch_size, const TilingConfig& tiling) {
  std::vector<Raster> out;
  const TileGrid grid = build_grid({image.width(), image.height()}, patch_size, patch_size);
  for (const TileSpec& t : grid.tiles) {
    Raster tile = extract_tile(image, t);
    if (tissue_fraction(tile, tiling.background_level) >= tiling.min_tissue_fraction) out.push_back(std::move(tile));
  }
  return out;
}

std::vector<DetectorSample> detector_samples(const Raster& image, std::span<const Annotation> annotations,
                                             int tile_size, int stride, bool include_hard_negatives) {
  std::vector<DetectorSample> out;
  const TileGrid grid = build_grid({image.width(), image.height()}, tile_size, stride);
  for (const TileSpec& t : grid.tiles) {
    DetectorSample s;
    s.tile = crop_reflect(image, t.origin.x, t.origin.y, tile_size, tile_size);
    const Point shift{-static_cast<double>(t.origin.x), -static_cast<double>(t.origin.y)};
    for (const Annotation& a : annotations) {
      if (!include_hard_negatives && a.label != AnnotationLabel::kMitosis) continue;
      const Point c = box_center(a.box);
      if (c.x < t.origin.x || c.x >= t.origin.x + tile_size || c.y < t.origin.y || c.y >= t.origin.y + tile_size) {
        continue;
      }
      const BoundingBox b = clip_box(translate_box(a.box, shift), tile_size, tile_size);
      if (b.valid()) s.truth.push_back(b);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<LabeledCrop> classifier_crops(const Raster& image, const std::string& slide_id,
                                          std::span<const Annotation> annotations, const ClassifierConfig& cfg) {
  std::vector<LabeledCrop> out;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const Annotation& a = annotations[i];
    LabeledCrop crop;
    crop.center = box_center(a.box);
    crop.pixels = make_crop(image, crop.center, cfg.crop_size);
    crop.label = a.label == AnnotationLabel::kMitosis ? CropLabel::kMitosis : CropLabel::kNonMitosis;
    crop.slide_id = slide_id;
    Fnv1a h;
    h.update(slide_id);
    h.update_pod(i);
    h.update_pod(cfg.seed);
    for (auto& c : augment_offline(crop, cfg.offline_rotations, h.digest())) out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------

SplitCounts split_counts(std::size_t n, const SplitRatios& ratios) {
  if (ratios.test_fraction < 0 || ratios.test_fraction >= 1 || ratios.validation_fraction < 0 ||
      ratios.validation_fraction >= 1) {
    throw std::invalid_argument("split fractions must lie in [0, 1)");
  }
  SplitCounts c;
  c.test = static_cast<std::size_t>(round_half_up(ratios.test_fraction * static_cast<double>(n)));
  const std::size_t rest = n - c.test;
  c.validation = static_cast<std::size_t>(round_half_up(ratios.validation_fraction * static_cast<double>(rest)));
  c.train = rest - c.validation;
  return c;
}

namespace {

/// Distributes `total` over groups proportionally to `sizes` (largest
/// remainder, ties to the earlier group), never exceeding a group's size.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& sizes) {
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> out(sizes.size(), 0);
  if (n == 0) return out;
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(sizes[i]) / static_cast<double>(n);
    out[i] = static_cast<std::size_t>(exact);
    given += out[i];
    rem.push_back({exact - static_cast<double>(out[i]), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < total; k = (k + 1) % rem.size()) {
    const std::size_t i = rem[k].second;
    if (out[i] < sizes[i]) {
      ++out[i];
      ++given;
    }
  }
  return out;
}

}  // namespace

DataSplit make_split(std::span<const std::string> ids, std::uint64_t seed, const SplitRatios& ratios,
                     std::span<const std::string> strata) {
  if (ids.size() < 5) throw std::invalid_argument("make_split: need at least 5 slides, got " + std::to_string(ids.size()));
  if (!strata.empty() && strata.size() != ids.size()) throw std::invalid_argument("make_split: strata size mismatch");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    throw std::invalid_argument("make_split: duplicate slide ids");
  }
  const SplitCounts counts = split_counts(ids.size(), ratios);

  // Groups in stratum-name order, members sorted, so the result does not
  // depend on input order.
  std::map<std::string, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) groups[strata.empty() ? std::string() : strata[i]].push_back(ids[i]);
  Rng rng(seed);
  std::vector<std::vector<std::string>> members;
  std::vector<std::size_t> sizes;
  for (auto& [_, g] : groups) {
    std::sort(g.begin(), g.end());
    rng.shuffle(std::span<std::string>(g));
    sizes.push_back(g.size());
    members.push_back(std::move(g));
  }

  DataSplit split;
  const auto test_q = apportion(counts.test, sizes);
  std::vector<std::size_t> left(sizes.size());
  for (std::size_t g = 0; g < sizes.size(); ++g) left[g] = sizes[g] - test_q[g];
  const auto val_q = apportion(counts.validation, left);
  for (std::size_t g = 0; g < members.size(); ++g) {
    const auto& m = members[g];
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (i < test_q[g]) {
        split.test.push_back(m[i]);
      } else if (i < test_q[g] + val_q[g]) {
        split.validation.push_back(m[i]);
      } else {
        split.train.push_back(m[i]);
      }
    }
  }
  for (auto* part : {&split.train, &split.validation, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

// ---------------------------------------------------------------------------

std::vector<ResultRecord> result_records(const SlideResult& r) {
  std::vector<ResultRecord> out;
  for (const auto& m : r.mitoses) out.push_back({r.slide_id, m.point.x, m.point.y, m.probability});
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("results line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

void write_record(std::ostream& out, const ResultRecord& r) {
  if (r.slide_id.find_first_of(",\n") != std::string::npos) {
    throw std::invalid_argument("slide id contains a separator: " + r.slide_id);
  }
  out << r.slide_id << ',' << format_double(r.x) << ',' << format_double(r.y) << ',' << format_double(r.probability)
      << '\n';
}

}  // namespace

void write_results(std::span<const ResultRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write results: " + path.string());
  out << "slide_id,x,y,prob\n";
  for (const auto& r : records) write_record(out, r);
  if (!out) throw std::runtime_error("error writing results: " + path.string());
}

void emit_results(const SlideResult& result, const std::filesystem::path& path) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write results: " + path.string());
  if (fresh) out << "slide_id,x,y,prob\n";
  for (const auto& r : result_records(result)) write_record(out, r);
  if (!out) throw std::runtime_error("error writing results: " + path.string());
}

std::vector<ResultRecord> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "slide_id,x,y,prob") {
    throw std::runtime_error("results file has no 'slide_id,x,y,prob' header: " + path.string());
  }
  std::vector<ResultRecord> out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw std::runtime_error("results line " + std::to_string(n) + ": expected 4 fields");
    out.push_back({f[0], parse_double(f[1], n), parse_double(f[2], n), parse_double(f[3], n)});
  }
  return out;
}

}  // namespace mitodet
