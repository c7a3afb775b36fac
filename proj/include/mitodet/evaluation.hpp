// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mitodet/geometry.hpp"

namespace mitodet {

struct ScoredPoint {
  Point point;
  double score = 0.0;
};

struct MatchPair {
  std::size_t detection = 0;
  std::size_t truth = 0;
  double distance = 0.0;
};

struct MatchResult {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::vector<MatchPair> pairs;
};

struct EvalConfig {
  double match_radius = 30.0;  // px; 7.5 µm at 0.25 µm/px
  bool per_slide = true;

  void validate() const;
};

/// Greedy matching: detections are visited by descending score (ties by
/// input index) and each takes its nearest unmatched truth within `radius`
/// (distance ties go to the lower truth index).
MatchResult match_points(std::span<const ScoredPoint> dets, std::span<const Point> truths, double radius);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Each ratio is 0 when its denominator is 0.
Prf prf(std::size_t tp, std::size_t fp, std::size_t fn);
Prf prf(const MatchResult& m);
/// F1 from precision and recall.
double f1_score(double precision, double recall);

struct SlideRow {
  std::string slide_id;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  Prf metrics;
};

struct EvalReport {
  std::vector<SlideRow> slides;  // sorted by slide id
  SlideRow aggregate;            // micro-averaged, slide_id "ALL"
};

/// Slides with truths but no detections count as all false negatives.
/// Throws std::invalid_argument for detections on a slide absent from
/// `truths`.
EvalReport evaluate_dataset(const std::map<std::string, std::vector<ScoredPoint>>& detections,
                            const std::map<std::string, std::vector<Point>>& truths, const EvalConfig& cfg);

/// Fixed-width table for humans.
void write_report_table(const EvalReport& report, std::ostream& out);
/// CSV with header slide_id,TP,FP,FN,P,R,F1; aggregate row last.
void write_report_csv(const EvalReport& report, std::ostream& out);

}  // namespace mitodet
