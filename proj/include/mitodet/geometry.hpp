// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

namespace mitodet {

/// A 2-D location in pixels. Whether it lives in the slide frame or in a
/// patch frame is decided by the caller.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Integer pixel location.
struct PixelIndex {
  long x = 0;
  long y = 0;

  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

/// Axis-aligned box, half-open in spirit: area = (x_max-x_min)*(y_max-y_min).
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Detector output. Scores are probabilities.
struct Detection {
  BoundingBox box;
  double score = 0.0;
  int class_id = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Maps patch coordinates into the slide frame:
///   slide = offset + patch * scale
/// so `scale` is the number of slide pixels covered by one patch pixel.
struct FrameTransform {
  Point offset;
  double scale = 1.0;

  /// Transform equivalent to applying `inner` first, then `*this`.
  FrameTransform compose(const FrameTransform& inner) const;
};

/// Throws std::invalid_argument when the box is degenerate or non-finite.
BoundingBox make_box(double x_min, double y_min, double x_max, double y_max);

double iou(const BoundingBox& a, const BoundingBox& b);

/// Greedy class-agnostic non-maximum suppression.
///
/// Candidates are visited by descending score (ties: lower x_min, then lower
/// y_min, then input order). A candidate survives if its IoU with every
/// previously kept box is <= iou_threshold. Surviving detections are copied
/// unchanged and returned in visiting order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

/// The visiting order used by nms(): indices sorted by the documented
/// score/x_min/y_min tie-break.
std::vector<std::size_t> score_order(std::span<const Detection> dets);

Point to_slide(const Point& p, const FrameTransform& t);
Point to_patch(const Point& p, const FrameTransform& t);

Point box_center(const BoundingBox& b);

/// Round-half-up (floor(v + 0.5)), the single rounding policy used whenever
/// sub-pixel coordinates are turned into pixel indices.
long round_half_up(double v);
PixelIndex to_pixel(const Point& p);

BoundingBox translate_box(const BoundingBox& b, const Point& offset);
BoundingBox clip_box(const BoundingBox& b, double width, double height);

/// Square box of side `size` centered at `c`.
BoundingBox box_around(const Point& c, double size);

double distance(const Point& a, const Point& b);

}  // namespace mitodet
