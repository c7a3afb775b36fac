// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mitodet {

bool BoundingBox::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

BoundingBox make_box(double x_min, double y_min, double x_max, double y_max) {
  BoundingBox b{x_min, y_min, x_max, y_max};
  if (!b.valid()) {
    throw std::invalid_argument("invalid bounding box: requires finite x_min < x_max, y_min < y_max");
  }
  return b;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const auto& a = dets[i];
    const auto& b = dets[j];
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
    return a.box.y_min < b.box.y_min;
  });
  return order;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("nms: iou_threshold must lie in [0, 1]");
  }
  const auto order = score_order(dets);
  std::vector<Detection> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

FrameTransform FrameTransform::compose(const FrameTransform& inner) const {
  // outer(inner(p)) = offset + (inner.offset + p*inner.scale) * scale
  return FrameTransform{{offset.x + inner.offset.x * scale, offset.y + inner.offset.y * scale},
                        scale * inner.scale};
}

Point to_slide(const Point& p, const FrameTransform& t) {
  return {t.offset.x + p.x * t.scale, t.offset.y + p.y * t.scale};
}

Point to_patch(const Point& p, const FrameTransform& t) {
  if (!(t.scale > 0.0)) throw std::invalid_argument("FrameTransform scale must be positive");
  return {(p.x - t.offset.x) / t.scale, (p.y - t.offset.y) / t.scale};
}

Point box_center(const BoundingBox& b) {
  return {(b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0};
}

long round_half_up(double v) { return static_cast<long>(std::floor(v + 0.5)); }

PixelIndex to_pixel(const Point& p) { return {round_half_up(p.x), round_half_up(p.y)}; }

BoundingBox translate_box(const BoundingBox& b, const Point& offset) {
  return {b.x_min + offset.x, b.y_min + offset.y, b.x_max + offset.x, b.y_max + offset.y};
}

BoundingBox clip_box(const BoundingBox& b, double width, double height) {
  return {std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height),
          std::clamp(b.x_max, 0.0, width), std::clamp(b.y_max, 0.0, height)};
}

BoundingBox box_around(const Point& c, double size) {
  const double h = size / 2.0;
  return {c.x - h, c.y - h, c.x + h, c.y + h};
}

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace mitodet
