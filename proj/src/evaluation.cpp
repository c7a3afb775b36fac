// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace mitodet {

void EvalConfig::validate() const {
  if (!(match_radius > 0)) throw std::invalid_argument("EvalConfig: match_radius must be positive");
}

MatchResult match_points(std::span<const ScoredPoint> dets, std::span<const Point> truths, double radius) {
  if (!(radius > 0)) throw std::invalid_argument("match_points: radius must be positive");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  MatchResult m;
  std::vector<bool> taken(truths.size(), false);
  for (std::size_t d : order) {
    std::size_t best = truths.size();
    double best_dist = radius;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (taken[t]) continue;
      const double dist = distance(dets[d].point, truths[t]);
      if (dist < best_dist || (dist == best_dist && best == truths.size())) {
        best = t;
        best_dist = dist;
      }
    }
    if (best < truths.size()) {
      taken[best] = true;
      m.pairs.push_back({d, best, best_dist});
    }
  }
  m.true_positives = m.pairs.size();
  m.false_positives = dets.size() - m.true_positives;
  m.false_negatives = truths.size() - m.true_positives;
  return m;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0 ? 2.0 * precision * recall / s : 0.0;
}

Prf prf(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf r;
  const double t = static_cast<double>(tp);
  r.precision = tp + fp > 0 ? t / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? t / static_cast<double>(tp + fn) : 0.0;
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

Prf prf(const MatchResult& m) { return prf(m.true_positives, m.false_positives, m.false_negatives); }

EvalReport evaluate_dataset(const std::map<std::string, std::vector<ScoredPoint>>& detections,
                            const std::map<std::string, std::vector<Point>>& truths, const EvalConfig& cfg) {
  cfg.validate();
  for (const auto& [id, _] : detections) {
    if (!truths.contains(id)) throw std::invalid_argument("evaluate_dataset: detections for unknown slide '" + id + "'");
  }
  EvalReport report;
  report.aggregate.slide_id = "ALL";
  static const std::vector<ScoredPoint> kNone;
  for (const auto& [id, pts] : truths) {
    const auto it = detections.find(id);
    const auto& dets = it == detections.end() ? kNone : it->second;
    const auto m = match_points(dets, pts, cfg.match_radius);
    SlideRow row{id, m.true_positives, m.false_positives, m.false_negatives, prf(m)};
    report.aggregate.tp += row.tp;
    report.aggregate.fp += row.fp;
    report.aggregate.fn += row.fn;
    report.slides.push_back(std::move(row));
  }
  report.aggregate.metrics = prf(report.aggregate.tp, report.aggregate.fp, report.aggregate.fn);
  return report;
}

namespace {

void row_table(const SlideRow& r, std::ostream& out) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %6zu %6zu %6zu %8.4f %8.4f %8.4f\n", r.slide_id.c_str(), r.tp, r.fp, r.fn,
                r.metrics.precision, r.metrics.recall, r.metrics.f1);
  out << buf;
}

void row_csv(const SlideRow& r, std::ostream& out) {
  char buf[64];
  out << r.slide_id << ',' << r.tp << ',' << r.fp << ',' << r.fn;
  for (double v : {r.metrics.precision, r.metrics.recall, r.metrics.f1}) {
    std::snprintf(buf, sizeof(buf), ",%.6f", v);
    out << buf;
  }
  out << '\n';
}

}  // namespace

void write_report_table(const EvalReport& report, std::ostream& out) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %6s %6s %6s %8s %8s %8s\n", "slide_id", "TP", "FP", "FN", "P", "R", "F1");
  out << buf;
  for (const auto& r : report.slides) row_table(r, out);
  out << std::string(70, '-') << '\n';
  row_table(report.aggregate, out);
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  out << "slide_id,TP,FP,FN,P,R,F1\n";
  for (const auto& r : report.slides) row_csv(r, out);
  row_csv(report.aggregate, out);
}

}  // namespace mitodet
