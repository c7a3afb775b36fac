// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mitodet/checkpoint.hpp"
#include "mitodet/geometry.hpp"
#include "mitodet/nn/layers.hpp"
#include "mitodet/raster.hpp"

namespace mitodet {

/// Single-level, single-class anchor detector settings.
///
/// Gating defaults (score 0.35, NMS IoU 0.1), the 1e-4 learning rate and
/// the 10000 training iterations are the reference values. Anchor, focal
/// and assignment defaults follow the usual one-stage detector recipe at the
/// stride-8 level: three octave scales of 32 px, aspect ratios 0.5/1/2.
struct DetectorConfig {
  int tile_size = 512;
  double nms_iou = 0.1;
  double score_threshold = 0.35;
  double learning_rate = 0.0001;
  int train_iterations = 10000;
  int batch_size = 4;
  std::vector<double> anchor_sizes{32.0, 40.3174736, 50.7968419};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  int feature_stride = 8;
  int backbone_channels = 32;
  int backbone_depth = 2;  // convolutions per stride-2 stage
  int head_channels = 64;
  int head_convs = 2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double pos_iou = 0.5;
  double neg_iou = 0.4;
  double smooth_l1_beta = 0.1;
  double prior_prob = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
  int anchors_per_location() const { return static_cast<int>(anchor_sizes.size() * anchor_ratios.size()); }
};

struct AnchorSet {
  int grid_width = 0;
  int grid_height = 0;
  int per_location = 0;
  int stride = 0;
  /// Index ((row * grid_width + col) * per_location + size_idx * n_ratios + ratio_idx).
  std::vector<BoundingBox> boxes;
};

/// Throws std::invalid_argument if the tile is not a multiple of the stride.
AnchorSet generate_anchors(const DetectorConfig& cfg, int tile);

using BoxDelta = std::array<double, 4>;  // dx, dy, dw, dh

/// Center/size offsets of `target` relative to `anchor`.
BoxDelta encode_box(const BoundingBox& anchor, const BoundingBox& target);
/// Inverse of encode_box (dw, dh clamped at log(1000/16)).
BoundingBox decode_box(const BoundingBox& anchor, const BoxDelta& delta);

struct AnchorTargets {
  std::vector<int> labels;        // 1 positive, 0 negative, -1 ignored
  std::vector<int> matched;       // truth index for positives, -1 otherwise
  std::vector<BoxDelta> deltas;   // meaningful for positives only
  int num_positive = 0;
};

/// IoU >= pos_iou -> positive, < neg_iou -> negative, otherwise ignored.
/// Each truth box additionally claims its highest-IoU anchor(s) as positive
/// so that no object is left without a positive anchor.
AnchorTargets encode_targets(const AnchorSet& anchors, std::span<const BoundingBox> truth, double pos_iou,
                             double neg_iou);

class DetectorModel {
 public:
  DetectorModel() = default;
  static DetectorModel create(const DetectorConfig& cfg);

  struct Output {
    nn::Var cls;  // (A, gh, gw) logits
    nn::Var box;  // (4A, gh, gw) deltas
  };
  Output forward(const nn::Var& planar_tile) const;

  const DetectorConfig& config() const { return config_; }
  nn::ParamList params() const;
  /// Classification-head parameters (weight, bias).
  nn::ParamList cls_head_params() const;

  Checkpoint to_checkpoint(const TrainingHistory& history, std::uint64_t iteration) const;
  static DetectorModel from_checkpoint(const Checkpoint& ckpt);

 private:
  DetectorConfig config_;
  std::vector<nn::Conv2d> backbone_;
  std::vector<nn::Conv2d> head_;
  nn::Conv2d cls_;
  nn::Conv2d box_;
};

/// Focal classification loss + smooth-L1 box loss on positives, both divided
/// by `normalizer`.
struct DetectorLoss {
  nn::Var cls;
  nn::Var box;
  nn::Var total;
};
DetectorLoss detector_loss(const DetectorModel& model, const nn::Var& planar_tile, const AnchorTargets& targets,
                           double normalizer);

/// Flatten head outputs into anchor order.
std::vector<double> anchor_logits(const DetectorModel::Output& out, int per_location);
std::vector<BoxDelta> anchor_deltas(const DetectorModel::Output& out, int per_location);

struct DetectorSample {
  Raster tile;
  std::vector<BoundingBox> truth;
};

struct DetectorTrainResult {
  DetectorModel model;
  TrainingHistory history;  // iteration, cls, box, total
};

/// Throws std::invalid_argument when no tile yields a positive anchor.
DetectorTrainResult train_detector(std::span<const DetectorSample> samples, const DetectorConfig& cfg);

/// Tile-frame detections: decode -> clip -> score gate -> NMS, sorted by
/// descending score. Throws std::invalid_argument on a tile-size mismatch.
std::vector<Detection> detect(const Raster& tile, const DetectorModel& model);
std::vector<Detection> detect(const Raster& tile, const DetectorModel& model, const DetectorConfig& gating);

}  // namespace mitodet
