#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascademine/cpl.hpp"
#include "cascademine/types.hpp"

namespace cascademine::eval {

struct PrPoint {
    double score_threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

/// Precision/recall at one fixed score threshold. Matching is per image and
/// class (greedy, score-descending, IoU >= iou_threshold). Conventions:
/// precision is 1.0 when nothing scores above the threshold, recall is 1.0
/// when there are no annotations.
PrPoint pr_at_threshold(std::span<const ResultRecord> detections,
                        std::span<const Annotation> annotations,
                        double score_threshold, double iou_threshold);

std::vector<PrPoint> pr_curve(std::span<const ResultRecord> detections,
                              std::span<const Annotation> annotations,
                              std::span<const double> score_grid, double iou_threshold);

/// 101-point interpolated average precision for one class. Inputs are that
/// class's detections (any order; ranking is score-descending with ties by
/// input index) and annotations. Returns 0 when there are no annotations;
/// callers exclude such classes from means.
double average_precision(std::span<const ResultRecord> class_detections,
                         std::span<const Annotation> class_annotations,
                         double iou_threshold);

/// The COCO IoU sweep 0.50:0.05:0.95.
std::vector<double> coco_iou_grid();

struct FixedApConfig {
    /// Dataset-wide per-class detection budget; there is no per-image cap.
    std::size_t cap_per_class = 10000;
    std::vector<double> iou_thresholds = {0.5};
    GroupScheme scheme = GroupScheme::lvis3;
};

struct EvalReport {
    double ap_overall = 0.0;
    std::map<std::string, double> ap_per_group;
    std::vector<std::pair<int, double>> ap_per_class;  // (category_id, ap)
    std::vector<int> zero_annotation_categories;
    std::vector<PrPoint> pr_points;
    std::map<std::string, double> pseudo_accuracy;
    std::map<std::string, std::size_t> pseudo_counts;
    nlohmann::json config_echo;
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
    std::string per_class_csv() const;
    static std::string pr_csv(std::span<const PrPoint> points);
};

/// Average precision with a dataset-wide per-class cap, aggregated overall
/// and per class group. Classes without annotations are excluded from every
/// mean and listed in the report.
EvalReport fixed_ap(std::span<const ResultRecord> detections, const DatasetBundle& bundle,
                    const FixedApConfig& config = {});

struct SourceAccuracy {
    std::map<std::string, double> accuracy;     // source -> fraction correct
    std::map<std::string, std::size_t> counts;  // source -> labels audited
};

/// Pseudo-label accuracy per source: each raw stage head ("stage_k") and
/// their ensemble ("ensemble"), over the same proposal population. A label
/// counts as correct when a class-agnostic greedy spatial match at
/// iou_threshold finds an annotation of the same class; unmatched labels
/// count as incorrect. Auditing an empty hidden split raises
/// ValidationError.
SourceAccuracy pseudo_accuracy(std::span<const DetectionRecord> stage_records,
                               int num_stages, const HiddenAnnotations& hidden,
                               const CategoryIndex& index, double iou_threshold);

/// Accuracy of the labels actually retained at each stage of a gated set
/// (keys "stage_k_retained").
std::map<std::string, double> retained_accuracy(const cpl::PseudoLabelSet& set,
                                                const HiddenAnnotations& hidden,
                                                const CategoryIndex& index,
                                                double iou_threshold);

/// [class][stage] retained pseudo-label counts.
std::vector<std::vector<std::size_t>> retained_counts_by_class(
    const cpl::PseudoLabelSet& set, std::size_t num_classes);

/// Per-group, per-stage retained counts under the given scheme; groups come
/// from the bundle's instance counts.
std::map<std::string, std::vector<std::size_t>> retained_counts_by_group(
    const cpl::PseudoLabelSet& set, const DatasetBundle& bundle,
    const CategoryIndex& index, GroupScheme scheme);

}  // namespace cascademine::eval
