// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mitodet/classification.hpp"
#include "mitodet/config.hpp"
#include "mitodet/data_io.hpp"
#include "mitodet/detection.hpp"
#include "mitodet/geometry.hpp"
#include "mitodet/raster.hpp"
#include "mitodet/stain_translation.hpp"
#include "mitodet/tiling.hpp"

namespace mitodet {

struct PipelineModels {
  TranslationModel translation;
  DetectorModel detector;
  ClassifierModel classifier;
};

/// Wall-clock seconds per stage.
struct StageTimings {
  double tiling = 0.0;
  double translation = 0.0;
  double detection = 0.0;
  double classification = 0.0;
};

struct MitosisPoint {
  Point point;  // slide frame
  double probability = 0.0;

  friend bool operator==(const MitosisPoint&, const MitosisPoint&) = default;
};

struct SlideResult {
  std::string slide_id;
  Extent extent;
  std::size_t tiles_total = 0;
  std::size_t tiles_kept = 0;
  std::vector<Detection> candidates;  // merged detector output, slide frame
  std::vector<MitosisPoint> mitoses;  // descending probability, then x, then y
  StageTimings timings;
  bool translation_cached = false;
  bool detection_cached = false;
};

/// Failure inside one stage of run_slide; what() is prefixed with the stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// In-memory stage cache keyed by content hashes of the inputs, model
/// weights and the relevant config fields.
class PipelineCache {
 public:
  struct Translated {
    Raster canvas;
    std::vector<TileSpec> kept;
    std::size_t tiles_total = 0;
  };

  const Translated* find_translation(std::uint64_t key) const;
  void store_translation(std::uint64_t key, Translated value);
  const std::vector<Detection>* find_detection(std::uint64_t key) const;
  void store_detection(std::uint64_t key, std::vector<Detection> value);
  void clear();

 private:
  std::map<std::uint64_t, Translated> translation_;
  std::map<std::uint64_t, std::vector<Detection>> detection_;
};

/// Tiling, tissue filter and A->B translation of a whole slide. Kept tiles
/// are pasted into a copy of `image`; skipped regions keep original pixels.
PipelineCache::Translated translate_slide(const Raster& image, const TranslationModel& model, const TilingConfig& tiling);

/// Full inference for one slide: tiling, tissue filter, stain translation,
/// tiled detection, slide-level NMS merge and crop classification.
SlideResult run_slide(const std::string& slide_id, const Raster& image, const PipelineModels& models,
                      const PipelineConfig& cfg, PipelineCache* cache = nullptr);

// ---------------------------------------------------------------------------
// Training data

/// Tissue-bearing patch_size tiles of a slide for translation training.
std::vector<Raster> translation_patches(const Raster& image, int patch_size, const TilingConfig& tiling);

/// Detector tiles over a (translated) slide on the detection grid. Truth
/// boxes are annotations whose center lies in the tile, clipped to it.
/// Hard negatives count as candidates unless `include_hard_negatives` is off.
std::vector<DetectorSample> detector_samples(const Raster& image, std::span<const Annotation> annotations,
                                             int tile_size, int stride, bool include_hard_negatives = true);

/// One crop per annotation at its box center (mitosis -> kMitosis, hard
/// negative -> kNonMitosis), followed by offline augmentation.
std::vector<LabeledCrop> classifier_crops(const Raster& image, const std::string& slide_id,
                                          std::span<const Annotation> annotations, const ClassifierConfig& cfg);

// ---------------------------------------------------------------------------
// Data split

struct SplitRatios {
  double test_fraction = 0.3;
  double validation_fraction = 0.2;  // of the non-test remainder
};

struct DataSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

SplitCounts split_counts(std::size_t n, const SplitRatios& ratios = {});

/// Seeded slide-level split. `strata[i]` (optional, same length as `ids`)
/// spreads each stratum over the partitions by largest remainder. Throws
/// std::invalid_argument for fewer than 5 slides or duplicate ids.
DataSplit make_split(std::span<const std::string> ids, std::uint64_t seed, const SplitRatios& ratios = {},
                     std::span<const std::string> strata = {});

// ---------------------------------------------------------------------------
// Result files

struct ResultRecord {
  std::string slide_id;
  double x = 0.0;
  double y = 0.0;
  double probability = 0.0;

  friend bool operator==(const ResultRecord&, const ResultRecord&) = default;
};

std::vector<ResultRecord> result_records(const SlideResult& r);

/// CSV "slide_id,x,y,prob". Numbers are written in shortest round-trip form.
void write_results(std::span<const ResultRecord> records, const std::filesystem::path& path);
/// Appends the slide's records to `path`, writing the header first when the
/// file is new or empty.
void emit_results(const SlideResult& result, const std::filesystem::path& path);
std::vector<ResultRecord> read_results(const std::filesystem::path& path);

}  // namespace mitodet
