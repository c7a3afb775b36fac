// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mitodet/config.hpp"
#include "mitodet/nn/optim.hpp"
#include "mitodet/random.hpp"
#include "mitodet/stain_translation.hpp"

namespace mitodet {

namespace {

const double kDeltaClamp = std::log(1000.0 / 16.0);

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void DetectorConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(nms_iou) || !unit(score_threshold) || !unit(pos_iou) || !unit(neg_iou) || !unit(focal_alpha) ||
      !(prior_prob > 0.0 && prior_prob < 1.0)) {
    throw std::invalid_argument("DetectorConfig: thresholds must lie in [0, 1]");
  }
  if (neg_iou > pos_iou) throw std::invalid_argument("DetectorConfig: neg_iou must not exceed pos_iou");
  if (tile_size <= 0 || train_iterations <= 0 || batch_size <= 0) {
    throw std::invalid_argument("DetectorConfig: counts must be positive");
  }
  if (!(learning_rate > 0)) throw std::invalid_argument("DetectorConfig: learning_rate must be positive");
  if (anchor_sizes.empty() || anchor_ratios.empty()) throw std::invalid_argument("DetectorConfig: no anchors");
  for (double s : anchor_sizes)
    if (!(s > 0)) throw std::invalid_argument("DetectorConfig: anchor sizes must be positive");
  for (double r : anchor_ratios)
    if (!(r > 0)) throw std::invalid_argument("DetectorConfig: anchor ratios must be positive");
  if (!is_power_of_two(feature_stride)) throw std::invalid_argument("DetectorConfig: feature_stride must be a power of two");
  if (backbone_channels <= 0 || backbone_depth <= 0 || head_channels <= 0 || head_convs < 0 || focal_gamma < 0 ||
      smooth_l1_beta <= 0) {
    throw std::invalid_argument("DetectorConfig: invalid architecture/loss settings");
  }
}

AnchorSet generate_anchors(const DetectorConfig& cfg, int tile) {
  if (tile <= 0 || cfg.feature_stride <= 0 || tile % cfg.feature_stride != 0) {
    throw std::invalid_argument("generate_anchors: tile size " + std::to_string(tile) +
                                " is not divisible by feature stride " + std::to_string(cfg.feature_stride));
  }
  AnchorSet set;
  set.stride = cfg.feature_stride;
  set.grid_width = tile / cfg.feature_stride;
  set.grid_height = set.grid_width;
  set.per_location = cfg.anchors_per_location();
  set.boxes.reserve(static_cast<std::size_t>(set.grid_width) * set.grid_height * set.per_location);
  for (int i = 0; i < set.grid_height; ++i) {
    for (int j = 0; j < set.grid_width; ++j) {
      const double cx = (j + 0.5) * cfg.feature_stride;
      const double cy = (i + 0.5) * cfg.feature_stride;
      for (double size : cfg.anchor_sizes) {
        for (double ratio : cfg.anchor_ratios) {
          // ratio = height / width, area = size^2
          const double w = size / std::sqrt(ratio);
          const double h = size * std::sqrt(ratio);
          set.boxes.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
      }
    }
  }
  return set;
}

BoxDelta encode_box(const BoundingBox& anchor, const BoundingBox& target) {
  const double aw = anchor.width(), ah = anchor.height();
  const Point ac = box_center(anchor), tc = box_center(target);
  return {(tc.x - ac.x) / aw, (tc.y - ac.y) / ah, std::log(target.width() / aw), std::log(target.height() / ah)};
}

BoundingBox decode_box(const BoundingBox& anchor, const BoxDelta& d) {
  const double aw = anchor.width(), ah = anchor.height();
  const Point ac = box_center(anchor);
  const double cx = ac.x + d[0] * aw;
  const double cy = ac.y + d[1] * ah;
  const double w = aw * std::exp(std::min(d[2], kDeltaClamp));
  const double h = ah * std::exp(std::min(d[3], kDeltaClamp));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

AnchorTargets encode_targets(const AnchorSet& anchors, std::span<const BoundingBox> truth, double pos_iou,
                             double neg_iou) {
  const std::size_t n = anchors.boxes.size();
  AnchorTargets t;
  t.labels.assign(n, 0);
  t.matched.assign(n, -1);
  t.deltas.assign(n, BoxDelta{0, 0, 0, 0});
  if (truth.empty()) return t;

  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_idx(n, -1);
  std::vector<double> truth_best(truth.size(), 0.0);
  std::vector<double> ious(n * truth.size());
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < truth.size(); ++g) {
      const double v = iou(anchors.boxes[a], truth[g]);
      ious[a * truth.size() + g] = v;
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_idx[a] = static_cast<int>(g);
      }
      truth_best[g] = std::max(truth_best[g], v);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (best_iou[a] >= pos_iou && best_idx[a] >= 0) {
      t.labels[a] = 1;
      t.matched[a] = best_idx[a];
    } else if (best_iou[a] >= neg_iou) {
      t.labels[a] = -1;
    }
  }
  // Low-quality fallback: every truth keeps its best anchor(s).
  for (std::size_t g = 0; g < truth.size(); ++g) {
    if (truth_best[g] <= 0.0) continue;
    for (std::size_t a = 0; a < n; ++a) {
      if (ious[a * truth.size() + g] == truth_best[g] && t.labels[a] != 1) {
        t.labels[a] = 1;
        t.matched[a] = static_cast<int>(g);
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (t.labels[a] == 1) {
      t.deltas[a] = encode_box(anchors.boxes[a], truth[static_cast<std::size_t>(t.matched[a])]);
      ++t.num_positive;
    }
  }
  return t;
}

DetectorModel DetectorModel::create(const DetectorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  DetectorModel m;
  m.config_ = cfg;
  const int cap = cfg.backbone_channels * 8;
  int c = cfg.backbone_channels;
  m.backbone_.emplace_back(3, c, nn::ConvSpec{3, 1, 1}, rng);
  for (int s = cfg.feature_stride; s > 1; s /= 2) {
    const int next = std::min(2 * c, cap);
    m.backbone_.emplace_back(c, next, nn::ConvSpec{3, 2, 1}, rng);
    c = next;
    for (int d = 1; d < cfg.backbone_depth; ++d) m.backbone_.emplace_back(c, c, nn::ConvSpec{3, 1, 1}, rng);
  }
  for (int h = 0; h < cfg.head_convs; ++h) {
    m.head_.emplace_back(c, cfg.head_channels, nn::ConvSpec{3, 1, 1}, rng);
    c = cfg.head_channels;
  }
  const int a = cfg.anchors_per_location();
  m.cls_ = nn::Conv2d(c, a, nn::ConvSpec{3, 1, 1}, rng, nn::Init::kNormal002);
  m.box_ = nn::Conv2d(c, 4 * a, nn::ConvSpec{3, 1, 1}, rng, nn::Init::kNormal002);
  const double prior_bias = -std::log((1.0 - cfg.prior_prob) / cfg.prior_prob);
  std::fill(m.cls_.bias()->value.begin(), m.cls_.bias()->value.end(), prior_bias);
  return m;
}

DetectorModel::Output DetectorModel::forward(const nn::Var& x) const {
  nn::Var h = x;
  for (const auto& l : backbone_) h = nn::relu(l(h));
  for (const auto& l : head_) h = nn::relu(l(h));
  return {cls_(h), box_(h)};
}

nn::ParamList DetectorModel::params() const {
  nn::ParamList p;
  for (std::size_t i = 0; i < backbone_.size(); ++i) backbone_[i].collect(p, "backbone" + std::to_string(i));
  for (std::size_t i = 0; i < head_.size(); ++i) head_[i].collect(p, "head" + std::to_string(i));
  cls_.collect(p, "cls");
  box_.collect(p, "box");
  return p;
}

nn::ParamList DetectorModel::cls_head_params() const {
  nn::ParamList p;
  cls_.collect(p, "cls");
  return p;
}

Checkpoint DetectorModel::to_checkpoint(const TrainingHistory& history, std::uint64_t iteration) const {
  Checkpoint ck;
  ck.stage = Stage::kDetector;
  ck.config_json = to_json_string(config_);
  ck.epoch = iteration;
  ck.history = history;
  ck.tensors = export_params(params());
  return ck;
}

DetectorModel DetectorModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.stage != Stage::kDetector) throw CheckpointError(CheckpointError::Kind::kStage, "expected a detector checkpoint");
  auto m = create(detector_config_from_json(ckpt.config_json));
  import_params(m.params(), ckpt.tensors);
  return m;
}

std::vector<double> anchor_logits(const DetectorModel::Output& out, int per_location) {
  const auto& s = out.cls->shape;
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<double> v(plane * per_location);
  for (std::size_t loc = 0; loc < plane; ++loc)
    for (int a = 0; a < per_location; ++a) v[loc * per_location + a] = out.cls->value[a * plane + loc];
  return v;
}

std::vector<BoxDelta> anchor_deltas(const DetectorModel::Output& out, int per_location) {
  const auto& s = out.box->shape;
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<BoxDelta> v(plane * per_location);
  for (std::size_t loc = 0; loc < plane; ++loc)
    for (int a = 0; a < per_location; ++a)
      for (int d = 0; d < 4; ++d) v[loc * per_location + a][d] = out.box->value[(a * 4 + d) * plane + loc];
  return v;
}

DetectorLoss detector_loss(const DetectorModel& model, const nn::Var& x, const AnchorTargets& targets,
                           double normalizer) {
  const auto& cfg = model.config();
  const auto out = model.forward(x);
  const int per = cfg.anchors_per_location();
  const std::size_t plane = static_cast<std::size_t>(out.cls->shape.h) * out.cls->shape.w;
  if (targets.labels.size() != plane * per) throw std::invalid_argument("detector_loss: target/anchor count mismatch");

  // Scatter anchor-ordered targets into head tensor layout.
  std::vector<int> cls_t(plane * per);
  std::vector<double> box_t(plane * per * 4, 0.0);
  std::vector<unsigned char> box_m(plane * per * 4, 0);
  for (std::size_t loc = 0; loc < plane; ++loc) {
    for (int a = 0; a < per; ++a) {
      const std::size_t k = loc * per + a;
      cls_t[a * plane + loc] = targets.labels[k];
      if (targets.labels[k] == 1) {
        for (int d = 0; d < 4; ++d) {
          box_t[(a * 4 + d) * plane + loc] = targets.deltas[k][d];
          box_m[(a * 4 + d) * plane + loc] = 1;
        }
      }
    }
  }
  DetectorLoss l;
  l.cls = nn::sigmoid_focal_loss(out.cls, cls_t, cfg.focal_alpha, cfg.focal_gamma, normalizer);
  l.box = nn::smooth_l1(out.box, box_t, box_m, cfg.smooth_l1_beta, normalizer);
  l.total = nn::add(l.cls, l.box);
  return l;
}

DetectorTrainResult train_detector(std::span<const DetectorSample> samples, const DetectorConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw std::invalid_argument("train_detector: no training tiles");
  const auto anchors = generate_anchors(cfg, cfg.tile_size);

  std::vector<std::vector<double>> inputs;
  std::vector<AnchorTargets> targets;
  int total_pos = 0;
  for (const auto& s : samples) {
    if (s.tile.width() != cfg.tile_size || s.tile.height() != cfg.tile_size) {
      throw std::invalid_argument("train_detector: tile is " + std::to_string(s.tile.width()) + "x" +
                                  std::to_string(s.tile.height()) + ", expected " + std::to_string(cfg.tile_size));
    }
    inputs.push_back(raster_to_planar(s.tile));
    targets.push_back(encode_targets(anchors, s.truth, cfg.pos_iou, cfg.neg_iou));
    total_pos += targets.back().num_positive;
  }
  if (total_pos == 0) throw std::invalid_argument("train_detector: no positive anchors in any tile (untrainable)");

  DetectorTrainResult result{DetectorModel::create(cfg), {}};
  result.history.columns = {"iteration", "cls", "box", "total"};
  const auto params = result.model.params();
  nn::Adam opt(params, cfg.learning_rate);
  Rng rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  const int ts = cfg.tile_size;

  std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int it = 1; it <= cfg.train_iterations; ++it) {
    int batch_pos = 0;
    for (auto& b : batch) {
      b = static_cast<std::size_t>(rng.below(samples.size()));
      batch_pos += targets[b].num_positive;
    }
    const double norm = std::max(1, batch_pos);
    double cls_sum = 0, box_sum = 0;
    for (std::size_t b : batch) {
      auto x = nn::constant({3, ts, ts}, inputs[b]);
      auto l = detector_loss(result.model, x, targets[b], norm);
      nn::backward(l.total);
      cls_sum += l.cls->item();
      box_sum += l.box->item();
    }
    opt.step();
    result.history.rows.push_back({static_cast<double>(it), cls_sum, box_sum, cls_sum + box_sum});
  }
  return result;
}

std::vector<Detection> detect(const Raster& tile, const DetectorModel& model) {
  return detect(tile, model, model.config());
}

std::vector<Detection> detect(const Raster& tile, const DetectorModel& model, const DetectorConfig& gating) {
  const auto& cfg = model.config();
  if (tile.width() != cfg.tile_size || tile.height() != cfg.tile_size) {
    throw std::invalid_argument("detect: tile is " + std::to_string(tile.width()) + "x" +
                                std::to_string(tile.height()) + ", model expects " + std::to_string(cfg.tile_size) +
                                "x" + std::to_string(cfg.tile_size));
  }
  nn::NoGradGuard guard;
  const auto anchors = generate_anchors(cfg, cfg.tile_size);
  const auto out = model.forward(nn::constant({3, tile.height(), tile.width()}, raster_to_planar(tile)));
  const int per = cfg.anchors_per_location();
  const auto logits = anchor_logits(out, per);
  const auto deltas = anchor_deltas(out, per);

  std::vector<Detection> cand;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double score = 1.0 / (1.0 + std::exp(-logits[k]));
    if (score < gating.score_threshold) continue;
    const auto box = clip_box(decode_box(anchors.boxes[k], deltas[k]), tile.width(), tile.height());
    if (!box.valid()) continue;
    cand.push_back({box, score, 0});
  }
  return nms(cand, gating.nms_iou);
}

}  // namespace mitodet
