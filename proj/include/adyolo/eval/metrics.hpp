#pragma once

// Detection metrics: greedy IoU matching and continuous-area average
// precision, plus per-cell evaluation reports.

#include <span>
#include <string>
#include <vector>

#include "adyolo/detector/detector.hpp"
#include "adyolo/eval/box.hpp"

namespace adyolo::eval {

struct ScoredDetection {
  int image = 0;
  int cell = 0;
  int anchor = 0;
  Real score = 0;
  Box box;
};

struct TruthBox {
  int image = 0;
  Box box;
};

struct PrPoint {
  Real score = 0;
  Real recall = 0;
  Real precision = 0;
  friend bool operator==(const PrPoint&, const PrPoint&) = default;
};

struct ApResult {
  Real ap = 0;
  std::vector<PrPoint> curve;  // one point per detection, in ranked order
  bool no_truths = false;      // AP fixed by convention, not measured
  int num_truths = 0;
  int num_detections = 0;
};

// Single class. Detections are ranked by score desc, then (image, cell,
// anchor) asc; each takes the highest-IoU unmatched truth in its image with
// IoU >= iou_threshold (lowest truth index on ties). AP is the area under the
// precision envelope over recall.
ApResult average_precision(std::span<const ScoredDetection> detections, std::span<const TruthBox> truths,
                           Real iou_threshold);

// Fraction of truths matched by detections scoring at least min_score.
Real recall_at(const ApResult& result, Real min_score);

struct EvalThresholds {
  Real iou = 0.5;
  Real score = 0.01;
  Real nms = 0.45;
  Real recall_score = 0.5;
  friend bool operator==(const EvalThresholds&, const EvalThresholds&) = default;
};

std::string thresholds_fingerprint(const EvalThresholds& t);

struct CellId {
  std::string model;
  std::string scenes;   // e.g. "I1"
  std::string patches;  // "clean", a corpus split, or "whitebox"
  friend bool operator==(const CellId&, const CellId&) = default;
};

struct ClassReport {
  std::string name;
  Real ap = 0;
  bool no_truths = false;
  int num_truths = 0;
  int num_detections = 0;
  Real recall = 0;  // at thresholds.recall_score
  std::vector<PrPoint> curve;
};

struct EvalReport {
  CellId cell;
  EvalThresholds thresholds;
  std::string fingerprint;
  std::vector<ClassReport> classes;  // model classes with at least one truth
  Real map = 0;

  const ClassReport* find(const std::string& name) const;
  Real ap(const std::string& name) const;  // throws when the class was not evaluated
};

// Label class ids index the model's class list; truths whose class the model
// lacks (patch boxes under an undefended model) are ignored.
EvalReport evaluate(const detector::DetectorModel& model, std::span<const detector::LabeledImage> scenes,
                    const EvalThresholds& thresholds, const CellId& cell);

}  // namespace adyolo::eval
