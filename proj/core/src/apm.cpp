#include "cascademine/apm.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cascademine/geometry.hpp"

namespace cascademine::apm {

void ApmConfig::validate() const {
    if (queue_capacity == 0) throw ConfigError("queue_capacity must be positive");
    if (epsilons.empty()) throw ConfigError("epsilons must name at least one stage");
    if (epsilons.size() != fallback_thresholds.size()) {
        throw ConfigError("fallback_thresholds must have one entry per stage");
    }
    for (std::size_t i = 1; i < epsilons.size(); ++i) {
        if (!(epsilons[i - 1] < epsilons[i])) {
            throw ConfigError("epsilons must be strictly ascending");
        }
    }
    for (double tau : fallback_thresholds) {
        if (tau < 0.0 || tau > 1.0) throw ConfigError("fallback thresholds must lie in [0,1]");
    }
    if (match_iou < 0.0 || match_iou > 1.0) throw ConfigError("match_iou must lie in [0,1]");
}

ClassStatsStore::ClassStatsStore(std::size_t num_classes, ApmConfig config)
    : config_(std::move(config)), queues_(num_classes) {
    config_.validate();
}

void ClassStatsStore::check_class(int class_index) const {
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= queues_.size()) {
        throw ReferentialIntegrityError("unknown class index " + std::to_string(class_index));
    }
}

void ClassStatsStore::record_confidence(int class_index, double confidence) {
    check_class(class_index);
    if (!(confidence >= 0.0 && confidence <= 1.0)) {
        throw ValidationError("confidence " + std::to_string(confidence) + " outside [0,1]");
    }
    std::deque<double>& q = queues_[class_index];
    q.push_back(confidence);
    if (q.size() > config_.queue_capacity) q.pop_front();
}

ClassStats ClassStatsStore::stats(int class_index) const {
    check_class(class_index);
    const std::deque<double>& q = queues_[class_index];
    ClassStats s;
    s.count = q.size();
    if (q.empty()) return s;
    double sum = 0.0;
    for (double v : q) sum += v;
    s.mean = sum / static_cast<double>(q.size());
    double sq = 0.0;
    for (double v : q) sq += (v - s.mean) * (v - s.mean);
    s.sigma = std::sqrt(sq / static_cast<double>(q.size()));
    return s;
}

double ClassStatsStore::threshold(int class_index, int stage) const {
    check_class(class_index);
    if (stage < 1 || stage > config_.num_stages()) {
        throw ValidationError("stage " + std::to_string(stage) + " out of range");
    }
    const ClassStats s = stats(class_index);
    if (s.count < config_.min_samples) return config_.fallback_thresholds[stage - 1];
    return std::clamp(s.mean + s.sigma * config_.epsilons[stage - 1], 0.0, 1.0);
}

std::vector<std::vector<double>> ClassStatsStore::threshold_table() const {
    std::vector<std::vector<double>> table(queues_.size());
    for (std::size_t c = 0; c < queues_.size(); ++c) {
        table[c].reserve(config_.epsilons.size());
        for (int k = 1; k <= config_.num_stages(); ++k) {
            table[c].push_back(threshold(static_cast<int>(c), k));
        }
    }
    return table;
}

nlohmann::json to_json(const ApmConfig& config) {
    return {{"queue_capacity", config.queue_capacity},
            {"min_samples", config.min_samples},
            {"epsilons", config.epsilons},
            {"fallback_thresholds", config.fallback_thresholds},
            {"record_gt_class_prob", config.record_gt_class_prob},
            {"match_iou", config.match_iou}};
}

ApmConfig apm_config_from_json(const nlohmann::json& c) {
    ApmConfig config;
    config.queue_capacity = c.value("queue_capacity", config.queue_capacity);
    config.min_samples = c.value("min_samples", config.min_samples);
    config.epsilons = c.value("epsilons", config.epsilons);
    config.fallback_thresholds = c.value("fallback_thresholds", config.fallback_thresholds);
    config.record_gt_class_prob = c.value("record_gt_class_prob", true);
    config.match_iou = c.value("match_iou", 0.5);
    return config;
}

nlohmann::json ClassStatsStore::to_json() const {
    nlohmann::json doc;
    doc["config"] = cascademine::apm::to_json(config_);
    doc["queues"] = nlohmann::json::array();
    for (const std::deque<double>& q : queues_) {
        doc["queues"].push_back(std::vector<double>(q.begin(), q.end()));
    }
    doc["thresholds"] = threshold_table();  // derived, for diagnostics
    return doc;
}

ClassStatsStore ClassStatsStore::from_json(const nlohmann::json& doc) {
    const ApmConfig config = apm_config_from_json(doc.at("config"));
    const nlohmann::json& queues = doc.at("queues");
    ClassStatsStore store(queues.size(), config);
    for (std::size_t i = 0; i < queues.size(); ++i) {
        for (double v : queues[i].get<std::vector<double>>()) {
            store.record_confidence(static_cast<int>(i), v);
        }
    }
    return store;
}

void populate_from_labeled(ClassStatsStore& store,
                           std::span<const DetectionRecord> ensemble_predictions,
                           const DatasetBundle& labeled,
                           const CategoryIndex& index) {
    // Group inputs per image, keeping record order within each image.
    std::map<std::int64_t, std::vector<const DetectionRecord*>> dets_by_image;
    for (const DetectionRecord& rec : ensemble_predictions) {
        dets_by_image[rec.image_id].push_back(&rec);
    }
    std::map<std::int64_t, std::vector<const Annotation*>> anns_by_image;
    for (const Annotation& ann : labeled.annotations) {
        anns_by_image[ann.image_id].push_back(&ann);
    }

    for (const auto& [image_id, dets] : dets_by_image) {
        const auto ann_it = anns_by_image.find(image_id);
        if (ann_it == anns_by_image.end()) continue;
        const std::vector<const Annotation*>& anns = ann_it->second;

        std::vector<ScoredBox> boxes;
        boxes.reserve(dets.size());
        for (const DetectionRecord* d : dets) {
            boxes.push_back({d->box, max_foreground(d->class_probs),
                             argmax_foreground(d->class_probs)});
        }
        std::vector<BBox> gt_boxes;
        gt_boxes.reserve(anns.size());
        for (const Annotation* a : anns) gt_boxes.push_back(a->box);

        const MatchResult match = greedy_match(boxes, gt_boxes, store.config().match_iou);
        for (const MatchPair& pair : match.pairs) {
            const DetectionRecord& det = *dets[pair.detection];
            const Annotation& ann = *anns[pair.annotation];
            const int gt_class = index.index_of(ann.category_id);
            const double value = store.config().record_gt_class_prob
                                     ? det.class_probs.at(gt_class)
                                     : max_foreground(det.class_probs);
            store.record_confidence(gt_class, value);
        }
    }
}

}  // namespace cascademine::apm
