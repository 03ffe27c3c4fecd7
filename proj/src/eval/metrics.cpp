#include "adyolo/eval/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "adyolo/numcore/hash.hpp"

namespace adyolo::eval {

ApResult average_precision(std::span<const ScoredDetection> detections, std::span<const TruthBox> truths,
                           Real iou_threshold) {
  ApResult out;
  out.num_truths = static_cast<int>(truths.size());
  out.num_detections = static_cast<int>(detections.size());
  if (truths.empty()) {
    out.no_truths = detections.empty();
    out.ap = detections.empty() ? 1 : 0;
    for (const ScoredDetection& d : detections) out.curve.push_back({d.score, 0, 0});
    std::sort(out.curve.begin(), out.curve.end(), [](const PrPoint& a, const PrPoint& b) { return a.score > b.score; });
    return out;
  }

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const ScoredDetection &x = detections[a], &y = detections[b];
    if (x.score != y.score) return x.score > y.score;
    if (x.image != y.image) return x.image < y.image;
    if (x.cell != y.cell) return x.cell < y.cell;
    return x.anchor < y.anchor;
  });

  std::vector<char> matched(truths.size(), 0);
  std::vector<char> is_tp(order.size(), 0);
  int tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const ScoredDetection& d = detections[order[k]];
    Real best = -1;
    std::size_t best_t = truths.size();
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (matched[t] || truths[t].image != d.image) continue;
      const Real v = iou(d.box, truths[t].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_t = t;
      }
    }
    if (best_t < truths.size()) {
      matched[best_t] = 1;
      is_tp[k] = 1;
      ++tp;
    }
    const Real n = static_cast<Real>(out.num_truths);
    out.curve.push_back({d.score, tp / n, tp / static_cast<Real>(k + 1)});
  }

  // Each true positive adds 1/T recall at the best precision reachable from
  // that rank onward.
  Real envelope = 0;
  Real area = 0;
  for (std::size_t k = order.size(); k-- > 0;) {
    envelope = std::max(envelope, out.curve[k].precision);
    if (is_tp[k]) area += envelope;
  }
  out.ap = area / out.num_truths;
  return out;
}

Real recall_at(const ApResult& result, Real min_score) {
  Real r = 0;
  for (const PrPoint& p : result.curve) {
    if (p.score < min_score) break;
    r = p.recall;
  }
  return r;
}

std::string thresholds_fingerprint(const EvalThresholds& t) {
  const nlohmann::json j = {{"iou", t.iou}, {"nms", t.nms}, {"recall_score", t.recall_score}, {"score", t.score}};
  return hex64(fnv1a64(j.dump()));
}

const ClassReport* EvalReport::find(const std::string& name) const {
  for (const ClassReport& c : classes)
    if (c.name == name) return &c;
  return nullptr;
}

Real EvalReport::ap(const std::string& name) const {
  const ClassReport* c = find(name);
  if (!c) throw std::out_of_range("class '" + name + "' not evaluated in cell " + cell.model + "/" + cell.scenes + "/" + cell.patches);
  return c->ap;
}

EvalReport evaluate(const detector::DetectorModel& model, std::span<const detector::LabeledImage> scenes,
                    const EvalThresholds& thresholds, const CellId& cell) {
  const int n = model.config.num_classes();
  std::vector<std::vector<detector::DecodedAnchor>> per_image(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < scenes.size(); ++i)
    per_image[i] = detector::detect(model, scenes[i].image, thresholds.score, thresholds.nms);

  std::vector<std::vector<ScoredDetection>> dets(static_cast<std::size_t>(n));
  std::vector<std::vector<TruthBox>> truths(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const int img = static_cast<int>(i);
    for (const detector::DecodedAnchor& d : per_image[i])
      dets[static_cast<std::size_t>(d.class_id)].push_back({img, d.cell, d.anchor, d.score, d.box()});
    for (const detector::GroundTruthBox& g : scenes[i].labels)
      if (g.class_id >= 0 && g.class_id < n) truths[static_cast<std::size_t>(g.class_id)].push_back({img, g.box()});
  }

  EvalReport report;
  report.cell = cell;
  report.thresholds = thresholds;
  report.fingerprint = thresholds_fingerprint(thresholds);
  for (int c = 0; c < n; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    if (truths[uc].empty()) continue;
    ApResult r = average_precision(dets[uc], truths[uc], thresholds.iou);
    ClassReport cr;
    cr.name = model.config.class_names[uc];
    cr.ap = r.ap;
    cr.no_truths = r.no_truths;
    cr.num_truths = r.num_truths;
    cr.num_detections = r.num_detections;
    cr.recall = recall_at(r, thresholds.recall_score);
    cr.curve = std::move(r.curve);
    report.classes.push_back(std::move(cr));
  }
  Real sum = 0;
  for (const ClassReport& c : report.classes) sum += c.ap;
  report.map = report.classes.empty() ? 0 : sum / static_cast<Real>(report.classes.size());
  return report;
}

}  // namespace adyolo::eval
