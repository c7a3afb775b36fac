// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mitodet {

using nlohmann::json;

void TilingConfig::validate() const {
  if (translation_tile <= 0 || translation_stride <= 0 || translation_stride > translation_tile || detection_stride <= 0) {
    throw std::invalid_argument("TilingConfig: tile sizes/strides must be positive with stride <= tile");
  }
  if (min_tissue_fraction < 0 || min_tissue_fraction > 1 || background_level <= 0 || background_level > 1) {
    throw std::invalid_argument("TilingConfig: fractions must lie in [0, 1]");
  }
}

void PipelineConfig::validate() const {
  translation.validate();
  detector.validate();
  classifier.validate();
  tiling.validate();
  evaluation.validate();
  if (merge_nms_iou < 0 || merge_nms_iou > 1) throw std::invalid_argument("PipelineConfig: merge_nms_iou must lie in [0, 1]");
  if (detector.tile_size > tiling.translation_tile) {
    throw std::invalid_argument("PipelineConfig: detection tile larger than translation tile");
  }
  if (tiling.detection_stride > detector.tile_size) {
    throw std::invalid_argument("PipelineConfig: detection stride larger than detection tile");
  }
  if (tiling.translation_tile % translation.downsampling_factor() != 0) {
    throw std::invalid_argument("PipelineConfig: translation tile must be divisible by " +
                                std::to_string(translation.downsampling_factor()));
  }
}

PipelineConfig desk_scale_config() {
  PipelineConfig c;
  c.tiling.translation_tile = 128;
  c.tiling.translation_stride = 128;
  c.tiling.detection_stride = 40;

  auto& t = c.translation;
  t.patch_size = 64;
  t.epochs = 30;
  t.learning_rate = 0.002;
  t.image_pool_size = 8;
  t.generator_channels = 8;
  t.generator_downsamplings = 2;
  t.generator_res_blocks = 2;
  t.discriminator_channels = 8;
  t.discriminator_layers = 2;

  auto& d = c.detector;
  d.tile_size = 64;
  d.feature_stride = 4;
  d.anchor_sizes = {12.0, 16.0};
  d.anchor_ratios = {1.0};
  d.backbone_channels = 8;
  d.backbone_depth = 1;
  d.head_channels = 16;
  d.head_convs = 1;
  d.learning_rate = 0.003;
  d.train_iterations = 400;

  auto& k = c.classifier;
  k.crop_size = 32;
  k.network_input = 32;
  k.width = 8;
  k.depth = 2;
  k.epochs = 20;
  k.learning_rate = 0.003;

  c.evaluation.match_radius = 8.0;
  return c;
}

namespace {

class JsonWriter {
 public:
  template <typename V>
  void field(const char* key, const V& v) { j_[key] = v; }
  template <typename T>
  void section(const char* key, const T& sub);
  json take() { return std::move(j_); }

 private:
  json j_ = json::object();
};

class JsonReader {
 public:
  JsonReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  template <typename V>
  void field(const char* key, V& v) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      v = j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }
  template <typename T>
  void section(const char* key, T& sub);
  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.contains(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename V>
void visit(V& v, TranslationConfig& c) {
  v.field("patch_size", c.patch_size);
  v.field("train_downscale", c.train_downscale);
  v.field("epochs", c.epochs);
  v.field("learning_rate", c.learning_rate);
  v.field("adam_beta1", c.adam_beta1);
  v.field("cycle_weight", c.cycle_weight);
  v.field("image_pool_size", c.image_pool_size);
  v.field("generator_channels", c.generator_channels);
  v.field("generator_downsamplings", c.generator_downsamplings);
  v.field("generator_res_blocks", c.generator_res_blocks);
  v.field("discriminator_channels", c.discriminator_channels);
  v.field("discriminator_layers", c.discriminator_layers);
  v.field("identity_init", c.identity_init);
  v.field("seed", c.seed);
}

template <typename V>
void visit(V& v, DetectorConfig& c) {
  v.field("tile_size", c.tile_size);
  v.field("nms_iou", c.nms_iou);
  v.field("score_threshold", c.score_threshold);
  v.field("learning_rate", c.learning_rate);
  v.field("train_iterations", c.train_iterations);
  v.field("batch_size", c.batch_size);
  v.field("anchor_sizes", c.anchor_sizes);
  v.field("anchor_ratios", c.anchor_ratios);
  v.field("feature_stride", c.feature_stride);
  v.field("backbone_channels", c.backbone_channels);
  v.field("backbone_depth", c.backbone_depth);
  v.field("head_channels", c.head_channels);
  v.field("head_convs", c.head_convs);
  v.field("focal_alpha", c.focal_alpha);
  v.field("focal_gamma", c.focal_gamma);
  v.field("pos_iou", c.pos_iou);
  v.field("neg_iou", c.neg_iou);
  v.field("smooth_l1_beta", c.smooth_l1_beta);
  v.field("prior_prob", c.prior_prob);
  v.field("seed", c.seed);
}

template <typename V>
void visit(V& v, ClassifierConfig& c) {
  v.field("crop_size", c.crop_size);
  v.field("network_input", c.network_input);
  v.field("epochs", c.epochs);
  v.field("learning_rate", c.learning_rate);
  v.field("early_stop_patience", c.early_stop_patience);
  v.field("confidence_threshold", c.confidence_threshold);
  v.field("batch_size", c.batch_size);
  v.field("width", c.width);
  v.field("depth", c.depth);
  v.field("validation_fraction", c.validation_fraction);
  v.field("offline_rotations", c.offline_rotations);
  v.field("online_max_shift", c.online_max_shift);
  v.field("online_hflip", c.online_hflip);
  v.field("online_vflip", c.online_vflip);
  v.field("seed", c.seed);
}

template <typename V>
void visit(V& v, TilingConfig& c) {
  v.field("translation_tile", c.translation_tile);
  v.field("translation_stride", c.translation_stride);
  v.field("detection_stride", c.detection_stride);
  v.field("min_tissue_fraction", c.min_tissue_fraction);
  v.field("background_level", c.background_level);
}

template <typename V>
void visit(V& v, EvalConfig& c) {
  v.field("match_radius", c.match_radius);
  v.field("per_slide", c.per_slide);
}

template <typename V>
void visit(V& v, PipelineConfig& c) {
  v.section("translation", c.translation);
  v.section("detector", c.detector);
  v.section("classifier", c.classifier);
  v.section("tiling", c.tiling);
  v.section("evaluation", c.evaluation);
  v.field("merge_nms_iou", c.merge_nms_iou);
  v.field("crops_from_translated", c.crops_from_translated);
}

template <typename T>
void JsonWriter::section(const char* key, const T& sub) {
  JsonWriter w;
  T copy = sub;
  visit(w, copy);
  j_[key] = w.take();
}

template <typename T>
void JsonReader::section(const char* key, T& sub) {
  seen_.insert(key);
  if (!j_.contains(key)) return;
  JsonReader r(j_.at(key), where_ + "." + key);
  visit(r, sub);
  r.finish();
}

template <typename T>
std::string write(const T& c) {
  JsonWriter w;
  T copy = c;
  visit(w, copy);
  return w.take().dump(2);
}

template <typename T>
T read(const std::string& text, const char* name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(name) + ": invalid JSON: " + e.what());
  }
  T c;
  JsonReader r(j, name);
  visit(r, c);
  r.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace

std::string to_json_string(const TranslationConfig& c) { return write(c); }
std::string to_json_string(const DetectorConfig& c) { return write(c); }
std::string to_json_string(const ClassifierConfig& c) { return write(c); }
std::string to_json_string(const PipelineConfig& c) { return write(c); }

TranslationConfig translation_config_from_json(const std::string& text) { return read<TranslationConfig>(text, "translation"); }
DetectorConfig detector_config_from_json(const std::string& text) { return read<DetectorConfig>(text, "detector"); }
ClassifierConfig classifier_config_from_json(const std::string& text) { return read<ClassifierConfig>(text, "classifier"); }
PipelineConfig pipeline_config_from_json(const std::string& text) { return read<PipelineConfig>(text, "config"); }

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return pipeline_config_from_json(ss.str());
}

}  // namespace mitodet
