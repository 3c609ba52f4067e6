#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "cascademine/types.hpp"

namespace cascademine {

/// Intersection over union. Boxes with zero area score 0 against anything,
/// including themselves, so degenerate detections never match.
double iou(const BBox& a, const BBox& b);

/// Generalized IoU: iou - (hull_area - union_area) / hull_area, in [-1, 1].
/// When the hull is degenerate the penalty term is zero.
double giou(const BBox& a, const BBox& b);

/// Partial derivatives of giou(a, b) with respect to a's four corners
/// (x_min, y_min, x_max, y_max). Piecewise; undefined exactly at corner
/// crossovers, where a one-sided branch is returned.
std::array<double, 4> giou_grad_first(const BBox& a, const BBox& b);

/// A scored box with a class, the unit of suppression and matching.
struct ScoredBox {
  BBox box;
  double score = 0.0;
  int label = 0;
};

/// Greedy non-maximum suppression, per class independently. Visits records
/// in descending score order (ties toward the lower input index) and drops
/// any record overlapping an already-kept record of the same class with
/// iou strictly above the threshold. Returns kept indices in input order.
std::vector<std::size_t> nms_indices(std::span<const ScoredBox> records,
                                     double iou_threshold);

/// NMS over detection records from one image; score is the max foreground
/// probability and the class is the foreground argmax.
std::vector<DetectionRecord> nms(std::span<const DetectionRecord> records,
                                 double iou_threshold);

struct MatchPair {
  std::size_t detection;
  std::size_t annotation;
  double iou;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_detections;
  std::vector<std::size_t> unmatched_annotations;
};

/// Greedy detection-to-ground-truth matching. Detections are visited in
/// descending score order (ties toward the lower index); each takes the
/// still-unmatched box with the highest IoU at or above the threshold,
/// ties toward the lower annotation index.
MatchResult greedy_match(std::span<const ScoredBox> detections,
                         std::span<const BBox> annotations,
                         double iou_threshold);

}  // namespace cascademine
