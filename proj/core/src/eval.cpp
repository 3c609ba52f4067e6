#include "cascademine/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cascademine/coco_io.hpp"
#include "cascademine/geometry.hpp"

namespace cascademine::eval {

namespace {

struct SourceLabel {
    std::int64_t image_id = 0;
    BBox box;
    int class_index = -1;
    double score = 0.0;
};

/// Fraction of labels whose class-agnostic spatial match carries the same
/// class; unmatched labels count as incorrect.
std::pair<double, std::size_t> audit_labels(std::span<const SourceLabel> labels,
                                            const HiddenAnnotations& hidden,
                                            const CategoryIndex& index,
                                            double iou_threshold) {
    std::map<std::int64_t, std::vector<const Annotation*>> anns_by_image;
    for (const Annotation& ann : hidden.audit()) anns_by_image[ann.image_id].push_back(&ann);

    std::map<std::int64_t, std::vector<std::size_t>> labels_by_image;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels_by_image[labels[i].image_id].push_back(i);
    }

    std::size_t correct = 0;
    for (const auto& [image_id, label_idx] : labels_by_image) {
        const auto ann_it = anns_by_image.find(image_id);
        if (ann_it == anns_by_image.end()) continue;  // all unmatched -> incorrect
        std::vector<ScoredBox> boxes;
        boxes.reserve(label_idx.size());
        for (std::size_t i : label_idx) {
            boxes.push_back({labels[i].box, labels[i].score, labels[i].class_index});
        }
        std::vector<BBox> gt;
        gt.reserve(ann_it->second.size());
        for (const Annotation* a : ann_it->second) gt.push_back(a->box);

        const MatchResult match = greedy_match(boxes, gt, iou_threshold);
        for (const MatchPair& pair : match.pairs) {
            const int gt_class = index.index_of(ann_it->second[pair.annotation]->category_id);
            if (labels[label_idx[pair.detection]].class_index == gt_class) ++correct;
        }
    }
    const std::size_t total = labels.size();
    return {total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total),
            total};
}

}  // namespace

PrPoint pr_at_threshold(std::span<const ResultRecord> detections,
                        std::span<const Annotation> annotations,
                        double score_threshold, double iou_threshold) {
    // (image, class) cells; matching never crosses either boundary.
    std::map<std::pair<std::int64_t, int>, std::vector<const ResultRecord*>> det_cells;
    for (const ResultRecord& det : detections) {
        if (det.score >= score_threshold) {
            det_cells[{det.image_id, det.category_id}].push_back(&det);
        }
    }
    std::map<std::pair<std::int64_t, int>, std::vector<const Annotation*>> ann_cells;
    for (const Annotation& ann : annotations) {
        ann_cells[{ann.image_id, ann.category_id}].push_back(&ann);
    }

    std::size_t tp = 0, fp = 0, kept = 0;
    for (const auto& [cell, dets] : det_cells) {
        kept += dets.size();
        const auto ann_it = ann_cells.find(cell);
        if (ann_it == ann_cells.end()) {
            fp += dets.size();
            continue;
        }
        std::vector<ScoredBox> boxes;
        boxes.reserve(dets.size());
        for (const ResultRecord* d : dets) boxes.push_back({d->box, d->score, d->category_id});
        std::vector<BBox> gt;
        gt.reserve(ann_it->second.size());
        for (const Annotation* a : ann_it->second) gt.push_back(a->box);
        const MatchResult match = greedy_match(boxes, gt, iou_threshold);
        tp += match.pairs.size();
        fp += match.unmatched_detections.size();
    }

    PrPoint point;
    point.score_threshold = score_threshold;
    point.precision = kept == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    point.recall = annotations.empty()
                       ? 1.0
                       : static_cast<double>(tp) / static_cast<double>(annotations.size());
    return point;
}

std::vector<PrPoint> pr_curve(std::span<const ResultRecord> detections,
                              std::span<const Annotation> annotations,
                              std::span<const double> score_grid, double iou_threshold) {
    std::vector<PrPoint> out;
    out.reserve(score_grid.size());
    for (double tau : score_grid) {
        out.push_back(pr_at_threshold(detections, annotations, tau, iou_threshold));
    }
    return out;
}

double average_precision(std::span<const ResultRecord> class_detections,
                         std::span<const Annotation> class_annotations,
                         double iou_threshold) {
    if (class_annotations.empty()) return 0.0;
    if (class_detections.empty()) return 0.0;

    std::vector<std::size_t> order(class_detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return class_detections[a].score > class_detections[b].score;
    });

    std::map<std::int64_t, std::vector<std::size_t>> anns_by_image;
    for (std::size_t i = 0; i < class_annotations.size(); ++i) {
        anns_by_image[class_annotations[i].image_id].push_back(i);
    }
    std::vector<bool> matched(class_annotations.size(), false);

    const std::size_t n = order.size();
    std::vector<double> precision(n), recall(n);
    std::size_t tp = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
        const ResultRecord& det = class_detections[order[rank]];
        double best_iou = 0.0;
        std::size_t best_ann = SIZE_MAX;
        if (const auto it = anns_by_image.find(det.image_id); it != anns_by_image.end()) {
            for (std::size_t ai : it->second) {
                if (matched[ai]) continue;
                const double v = iou(det.box, class_annotations[ai].box);
                if (v >= iou_threshold && v > best_iou) {
                    best_iou = v;
                    best_ann = ai;
                }
            }
        }
        if (best_ann != SIZE_MAX) {
            matched[best_ann] = true;
            ++tp;
        }
        precision[rank] = static_cast<double>(tp) / static_cast<double>(rank + 1);
        recall[rank] = static_cast<double>(tp) / static_cast<double>(class_annotations.size());
    }

    // Monotone precision envelope from the right, then 101 recall levels.
    std::vector<double> envelope(precision);
    for (std::size_t i = n - 1; i-- > 0;) {
        envelope[i] = std::max(envelope[i], envelope[i + 1]);
    }
    double sum = 0.0;
    std::size_t idx = 0;
    for (int level = 0; level <= 100; ++level) {
        const double r = static_cast<double>(level) / 100.0;
        while (idx < n && recall[idx] < r) ++idx;
        if (idx == n) break;  // no rank reaches this recall; precision 0 from here on
        sum += envelope[idx];
    }
    return sum / 101.0;
}

std::vector<double> coco_iou_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 10; ++i) grid.push_back(0.5 + 0.05 * i);
    return grid;
}

EvalReport fixed_ap(std::span<const ResultRecord> detections, const DatasetBundle& bundle,
                    const FixedApConfig& config) {
    if (config.iou_thresholds.empty()) throw ConfigError("fixed_ap needs an IoU grid");

    std::map<int, std::vector<Annotation>> anns_by_category;
    std::map<int, std::int64_t> counts;
    for (const Category& cat : bundle.categories) counts[cat.id] = 0;
    for (const Annotation& ann : bundle.annotations) {
        const auto it = counts.find(ann.category_id);
        if (it == counts.end()) {
            throw ReferentialIntegrityError("annotation " + std::to_string(ann.id) +
                                            " references unknown category " +
                                            std::to_string(ann.category_id));
        }
        ++it->second;
        anns_by_category[ann.category_id].push_back(ann);
    }

    std::map<int, std::vector<ResultRecord>> dets_by_category;
    for (const ResultRecord& det : detections) {
        if (!counts.contains(det.category_id)) {
            throw ReferentialIntegrityError("detection in image " +
                                            std::to_string(det.image_id) +
                                            " references unknown category " +
                                            std::to_string(det.category_id));
        }
        dets_by_category[det.category_id].push_back(det);
    }

    EvalReport report;
    std::map<ClassGroup, std::pair<double, std::size_t>> group_sums;
    double overall_sum = 0.0;
    std::size_t eligible = 0;

    for (const Category& cat : bundle.categories) {
        const std::int64_t n_ann = counts[cat.id];
        if (n_ann == 0) {
            report.zero_annotation_categories.push_back(cat.id);
            continue;
        }
        std::vector<ResultRecord> dets = dets_by_category[cat.id];
        std::stable_sort(dets.begin(), dets.end(), [](const ResultRecord& a,
                                                      const ResultRecord& b) {
            return a.score > b.score;
        });
        if (dets.size() > config.cap_per_class) dets.resize(config.cap_per_class);

        const std::vector<Annotation>& anns = anns_by_category[cat.id];
        double ap = 0.0;
        for (double iou_thr : config.iou_thresholds) {
            ap += average_precision(dets, anns, iou_thr);
        }
        ap /= static_cast<double>(config.iou_thresholds.size());

        report.ap_per_class.emplace_back(cat.id, ap);
        overall_sum += ap;
        ++eligible;
        const ClassGroup group = group_for_count(n_ann, config.scheme);
        group_sums[group].first += ap;
        group_sums[group].second += 1;
    }

    report.ap_overall = eligible == 0 ? 0.0 : overall_sum / static_cast<double>(eligible);
    for (const auto& [group, sum_count] : group_sums) {
        report.ap_per_group[to_string(group)] =
            sum_count.first / static_cast<double>(sum_count.second);
    }
    report.config_echo = {{"cap_per_class", config.cap_per_class},
                          {"iou_thresholds", config.iou_thresholds},
                          {"scheme", to_string(config.scheme)}};
    report.notes.push_back(
        "categories absent from an image count as exhaustively annotated negatives");
    if (!report.zero_annotation_categories.empty()) {
        report.notes.push_back("categories without annotations are excluded from AP means");
    }
    return report;
}

SourceAccuracy pseudo_accuracy(std::span<const DetectionRecord> stage_records,
                               int num_stages, const HiddenAnnotations& hidden,
                               const CategoryIndex& index, double iou_threshold) {
    if (hidden.empty()) {
        throw ValidationError("pseudo-label audit needs hidden ground truth");
    }
    SourceAccuracy out;

    for (int k = 1; k <= num_stages; ++k) {
        std::vector<SourceLabel> labels;
        for (const DetectionRecord& rec : stage_records) {
            if (rec.stage != k) continue;
            labels.push_back({rec.image_id, rec.box, argmax_foreground(rec.class_probs),
                              max_foreground(rec.class_probs)});
        }
        const auto [acc, count] = audit_labels(labels, hidden, index, iou_threshold);
        const std::string key = "stage_" + std::to_string(k);
        out.accuracy[key] = acc;
        out.counts[key] = count;
    }

    std::vector<SourceLabel> ensemble_labels;
    for (const cpl::TeacherTarget& t : cpl::ensemble_batch(stage_records, num_stages)) {
        ensemble_labels.push_back({t.image_id, t.b_t, t.y_hat, t.q_t});
    }
    const auto [acc, count] = audit_labels(ensemble_labels, hidden, index, iou_threshold);
    out.accuracy["ensemble"] = acc;
    out.counts["ensemble"] = count;
    return out;
}

std::map<std::string, double> retained_accuracy(const cpl::PseudoLabelSet& set,
                                                const HiddenAnnotations& hidden,
                                                const CategoryIndex& index,
                                                double iou_threshold) {
    if (hidden.empty()) {
        throw ValidationError("pseudo-label audit needs hidden ground truth");
    }
    std::map<std::string, double> out;
    for (int k = 1; k <= set.num_stages; ++k) {
        std::vector<SourceLabel> labels;
        for (std::size_t i : set.retained_at(k)) {
            const cpl::TeacherTarget& t = set.labels[i].target;
            labels.push_back({t.image_id, t.b_t, t.y_hat, t.q_t});
        }
        if (labels.empty()) continue;  // stage retained nothing; no key
        const auto [acc, count] = audit_labels(labels, hidden, index, iou_threshold);
        out["stage_" + std::to_string(k) + "_retained"] = acc;
    }
    return out;
}

std::vector<std::vector<std::size_t>> retained_counts_by_class(
    const cpl::PseudoLabelSet& set, std::size_t num_classes) {
    std::vector<std::vector<std::size_t>> counts(
        num_classes, std::vector<std::size_t>(set.num_stages, 0));
    for (const cpl::PseudoLabel& l : set.labels) {
        if (l.target.y_hat < 0 ||
            static_cast<std::size_t>(l.target.y_hat) >= num_classes) {
            continue;
        }
        for (int k = 0; k < set.num_stages; ++k) {
            if (l.stage_pass[k]) ++counts[l.target.y_hat][k];
        }
    }
    return counts;
}

std::map<std::string, std::vector<std::size_t>> retained_counts_by_group(
    const cpl::PseudoLabelSet& set, const DatasetBundle& bundle,
    const CategoryIndex& index, GroupScheme scheme) {
    std::map<int, std::int64_t> counts;
    for (const Category& cat : bundle.categories) counts[cat.id] = 0;
    for (const Annotation& ann : bundle.annotations) ++counts[ann.category_id];

    const auto by_class = retained_counts_by_class(set, index.size());
    std::map<std::string, std::vector<std::size_t>> out;
    for (const Category& cat : bundle.categories) {
        const std::string group = to_string(group_for_count(counts[cat.id], scheme));
        auto& slot = out[group];
        if (slot.empty()) slot.assign(set.num_stages, 0);
        const auto& row = by_class[index.index_of(cat.id)];
        for (int k = 0; k < set.num_stages; ++k) slot[k] += row[k];
    }
    return out;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json doc;
    doc["ap_overall"] = ap_overall;
    doc["ap_per_group"] = ap_per_group;
    doc["ap_per_class"] = nlohmann::json::array();
    for (const auto& [id, ap] : ap_per_class) {
        doc["ap_per_class"].push_back({{"category_id", id}, {"ap", ap}});
    }
    doc["zero_annotation_categories"] = zero_annotation_categories;
    if (!pr_points.empty()) {
        doc["pr_points"] = nlohmann::json::array();
        for (const PrPoint& p : pr_points) {
            doc["pr_points"].push_back({{"score_threshold", p.score_threshold},
                                        {"precision", p.precision},
                                        {"recall", p.recall}});
        }
    }
    if (!pseudo_accuracy.empty()) doc["pseudo_accuracy"] = pseudo_accuracy;
    if (!pseudo_counts.empty()) doc["pseudo_counts"] = pseudo_counts;
    if (!config_echo.is_null()) doc["config"] = config_echo;
    doc["notes"] = notes;
    return doc;
}

std::string EvalReport::per_class_csv() const {
    std::string csv = "category_id,ap\n";
    for (const auto& [id, ap] : ap_per_class) {
        csv += std::to_string(id);
        csv += ',';
        csv += format_double(ap);
        csv += '\n';
    }
    return csv;
}

std::string EvalReport::pr_csv(std::span<const PrPoint> points) {
    std::string csv = "score_threshold,precision,recall\n";
    for (const PrPoint& p : points) {
        csv += format_double(p.score_threshold);
        csv += ',';
        csv += format_double(p.precision);
        csv += ',';
        csv += format_double(p.recall);
        csv += '\n';
    }
    return csv;
}

}  // namespace cascademine::eval
