#include "cascademine/geometry.hpp"

#include <algorithm>
#include <numeric>

namespace cascademine {

namespace {

struct Overlap {
  double inter = 0.0;
  double uni = 0.0;
  double hull = 0.0;
};

Overlap overlap_areas(const BBox& a, const BBox& b) {
  Overlap o;
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  o.inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  o.uni = a.area() + b.area() - o.inter;
  const double hw = std::max(a.x_max, b.x_max) - std::min(a.x_min, b.x_min);
  const double hh = std::max(a.y_max, b.y_max) - std::min(a.y_min, b.y_min);
  o.hull = hw * hh;
  return o;
}

// Canonical visitation order: score descending, index ascending on ties.
std::vector<std::size_t> by_score_desc(std::span<const ScoredBox> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return records[i].score > records[j].score;
  });
  return order;
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
  if (a.area() <= 0.0 || b.area() <= 0.0) return 0.0;
  const Overlap o = overlap_areas(a, b);
  if (o.uni <= 0.0) return 0.0;
  return o.inter / o.uni;
}

double giou(const BBox& a, const BBox& b) {
  const double base = iou(a, b);
  const Overlap o = overlap_areas(a, b);
  if (o.hull <= 0.0) return base;
  return base - (o.hull - o.uni) / o.hull;
}

std::array<double, 4> giou_grad_first(const BBox& a, const BBox& b) {
  // giou = inter/union - 1 + union/hull, all three areas piecewise-bilinear
  // in a's corners.
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const bool overlapping = iw > 0.0 && ih > 0.0;
  const double inter = overlapping ? iw * ih : 0.0;

  const double area_a = a.area();
  const double area_b = b.area();
  const double uni = area_a + area_b - inter;
  const double hw = std::max(a.x_max, b.x_max) - std::min(a.x_min, b.x_min);
  const double hh = std::max(a.y_max, b.y_max) - std::min(a.y_min, b.y_min);
  const double hull = hw * hh;

  // d(area_a)/d corners
  const std::array<double, 4> d_area = {-a.height(), -a.width(), a.height(), a.width()};

  std::array<double, 4> d_inter = {0, 0, 0, 0};
  if (overlapping) {
    if (a.x_min > b.x_min) d_inter[0] = -ih;
    if (a.y_min > b.y_min) d_inter[1] = -iw;
    if (a.x_max < b.x_max) d_inter[2] = ih;
    if (a.y_max < b.y_max) d_inter[3] = iw;
  }

  std::array<double, 4> d_hull = {0, 0, 0, 0};
  if (a.x_min < b.x_min) d_hull[0] = -hh;
  if (a.y_min < b.y_min) d_hull[1] = -hw;
  if (a.x_max > b.x_max) d_hull[2] = hh;
  if (a.y_max > b.y_max) d_hull[3] = hw;

  // Degenerate boxes make iou identically 0 in a neighborhood; treat the
  // whole expression as constant there.
  std::array<double, 4> grad = {0, 0, 0, 0};
  if (area_a <= 0.0 || area_b <= 0.0 || hull <= 0.0 || uni <= 0.0) return grad;

  for (int i = 0; i < 4; ++i) {
    const double d_uni = d_area[i] - d_inter[i];
    const double d_iou = (d_inter[i] * uni - inter * d_uni) / (uni * uni);
    const double d_penalty = (d_uni * hull - uni * d_hull[i]) / (hull * hull);
    grad[i] = d_iou + d_penalty;
  }
  return grad;
}

std::vector<std::size_t> nms_indices(std::span<const ScoredBox> records,
                                     double iou_threshold) {
  const auto order = by_score_desc(records);
  std::vector<bool> suppressed(records.size(), false);
  std::vector<std::size_t> kept_sorted;
  for (std::size_t idx : order) {
    if (suppressed[idx]) continue;
    kept_sorted.push_back(idx);
    for (std::size_t other : order) {
      if (other == idx || suppressed[other]) continue;
      if (records[other].label != records[idx].label) continue;
      if (iou(records[other].box, records[idx].box) > iou_threshold) {
        suppressed[other] = true;
      }
    }
  }
  std::sort(kept_sorted.begin(), kept_sorted.end());
  return kept_sorted;
}

std::vector<DetectionRecord> nms(std::span<const DetectionRecord> records,
                                 double iou_threshold) {
  std::vector<ScoredBox> scored;
  scored.reserve(records.size());
  for (const auto& r : records) {
    scored.push_back({r.box, max_foreground(r.class_probs), argmax_foreground(r.class_probs)});
  }
  std::vector<DetectionRecord> kept;
  for (std::size_t idx : nms_indices(scored, iou_threshold)) {
    kept.push_back(records[idx]);
  }
  return kept;
}

MatchResult greedy_match(std::span<const ScoredBox> detections,
                         std::span<const BBox> annotations,
                         double iou_threshold) {
  MatchResult result;
  std::vector<bool> taken(annotations.size(), false);
  std::vector<bool> matched_det(detections.size(), false);

  for (std::size_t det : by_score_desc(detections)) {
    double best_iou = 0.0;
    std::size_t best_ann = annotations.size();
    for (std::size_t ann = 0; ann < annotations.size(); ++ann) {
      if (taken[ann]) continue;
      const double v = iou(detections[det].box, annotations[ann]);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best_ann = ann;
      }
    }
    if (best_ann < annotations.size()) {
      taken[best_ann] = true;
      matched_det[det] = true;
      result.pairs.push_back({det, best_ann, best_iou});
    }
  }

  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const MatchPair& a, const MatchPair& b) { return a.detection < b.detection; });
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (!matched_det[i]) result.unmatched_detections.push_back(i);
  }
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    if (!taken[i]) result.unmatched_annotations.push_back(i);
  }
  return result;
}

}  // namespace cascademine
