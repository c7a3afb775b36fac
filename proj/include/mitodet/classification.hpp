// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mitodet/checkpoint.hpp"
#include "mitodet/geometry.hpp"
#include "mitodet/nn/layers.hpp"
#include "mitodet/raster.hpp"

namespace mitodet {

struct ClassifierConfig {
  int crop_size = 50;
  int network_input = 64;
  int epochs = 50;
  double learning_rate = 0.001;
  int early_stop_patience = 5;
  double confidence_threshold = 0.7;
  int batch_size = 16;
  int width = 16;   // stem channels
  int depth = 3;    // stride-2 stages
  double validation_fraction = 0.2;
  int offline_rotations = 3;  // right-angle rotated copies per crop, 0..3
  double online_max_shift = 0.1;  // fraction of the side
  bool online_hflip = true;
  bool online_vflip = true;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class CropLabel { kNonMitosis = 0, kMitosis = 1 };

struct LabeledCrop {
  Raster pixels;
  CropLabel label = CropLabel::kNonMitosis;
  std::string slide_id;
  Point center;
};

/// crop_size × crop_size window centered on `center` (top-left at
/// round_half_up(center - crop_size/2)); overruns are mirror-reflected.
/// Throws std::out_of_range when the center is outside the image.
Raster make_crop(const Raster& image, const Point& center, int crop_size);

/// The crop, its vertical flip, and `cfg.offline_rotations` copies rotated
/// by distinct seed-chosen multiples of 90°.
std::vector<LabeledCrop> augment_offline(const LabeledCrop& crop, int rotations, std::uint64_t seed);

struct OnlineAugment {
  double max_shift = 0.1;
  bool hflip = true;
  bool vflip = true;
};

/// Per-sample random height/width shift (mirror fill) and random flips.
std::vector<LabeledCrop> augment_online(std::span<const LabeledCrop> batch, const OnlineAugment& aug,
                                        std::uint64_t seed);

class ClassifierModel {
 public:
  ClassifierModel() = default;
  static ClassifierModel create(const ClassifierConfig& cfg);

  /// Two logits: [non-mitosis, mitosis].
  nn::Var forward(const nn::Var& planar) const;

  const ClassifierConfig& config() const { return config_; }
  nn::ParamList params() const;

  Checkpoint to_checkpoint(const TrainingHistory& history, std::uint64_t epoch) const;
  static ClassifierModel from_checkpoint(const Checkpoint& ckpt);

 private:
  ClassifierConfig config_;
  std::vector<nn::Conv2d> convs_;
  nn::Linear fc_;
};

/// Planar network input for a crop (resized to network_input).
std::vector<double> classifier_input(const Raster& crop, const ClassifierConfig& cfg);

struct ClassifierTrainResult {
  ClassifierModel model;
  TrainingHistory history;  // epoch, train_loss, val_loss, val_accuracy
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<std::size_t> validation_indices;  // into the training input
};

/// Cross-entropy training with online augmentation and early stopping on
/// validation loss (best weights restored). Throws std::invalid_argument for
/// single-class data.
ClassifierTrainResult train_classifier(std::span<const LabeledCrop> crops, const ClassifierConfig& cfg);

/// Crop directory: crops/<index>.png plus index.csv with one
/// "path,label,slide_id,x,y" record per crop (label: mitosis|non_mitosis).
void write_crop_dataset(std::span<const LabeledCrop> crops, const std::filesystem::path& dir);
std::vector<LabeledCrop> read_crop_dataset(const std::filesystem::path& dir);

struct Classification {
  double probability = 0.0;  // of mitosis
  bool is_mitosis = false;   // probability >= confidence_threshold
  double probabilities[2] = {0.0, 0.0};
};

/// Inclusive confidence gate.
inline bool passes_confidence(double probability, double threshold) { return probability >= threshold; }

/// Throws std::invalid_argument for a crop that is not crop_size².
Classification classify(const Raster& crop, const ClassifierModel& model);
Classification classify(const Raster& crop, const ClassifierModel& model, double confidence_threshold);
std::vector<Classification> classify_batch(std::span<const Raster> crops, const ClassifierModel& model);

/// Mean cross-entropy and argmax accuracy on un-augmented crops.
std::pair<double, double> evaluate_classifier(std::span<const LabeledCrop> crops, const ClassifierModel& model);

}  // namespace mitodet
