// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "mitodet/classification.hpp"
#include "mitodet/detection.hpp"
#include "mitodet/evaluation.hpp"
#include "mitodet/stain_translation.hpp"

namespace mitodet {

struct TilingConfig {
  int translation_tile = 1024;
  int translation_stride = 1024;
  int detection_stride = 448;  // 64 px overlap between 512 px detection tiles
  double min_tissue_fraction = 0.05;
  double background_level = 0.85;

  void validate() const;
};

struct PipelineConfig {
  TranslationConfig translation;
  DetectorConfig detector;
  ClassifierConfig classifier;
  TilingConfig tiling;
  EvalConfig evaluation;
  double merge_nms_iou = 0.1;
  bool crops_from_translated = true;

  void validate() const;
};

/// Small networks, 64 px detection tiles and 128 px translation tiles for
/// CPU runs on the synthetic fixtures. Thresholds keep their defaults.
PipelineConfig desk_scale_config();

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON (nested objects, one key per field). Readers start from the defaults,
// override the keys present and reject unknown keys.
std::string to_json_string(const TranslationConfig& c);
std::string to_json_string(const DetectorConfig& c);
std::string to_json_string(const ClassifierConfig& c);
std::string to_json_string(const PipelineConfig& c);

TranslationConfig translation_config_from_json(const std::string& text);
DetectorConfig detector_config_from_json(const std::string& text);
ClassifierConfig classifier_config_from_json(const std::string& text);
PipelineConfig pipeline_config_from_json(const std::string& text);

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace mitodet
