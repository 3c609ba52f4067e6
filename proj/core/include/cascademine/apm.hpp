#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascademine/types.hpp"

namespace cascademine::apm {

struct ApmConfig {
    std::size_t queue_capacity = 256;
    std::size_t min_samples = 8;
    /// Stage multipliers over sigma, strictly ascending. Their count is the
    /// number of cascade stages.
    std::vector<double> epsilons = {1.0, 1.5, 2.0};
    /// Per-stage thresholds used while a class queue holds fewer than
    /// min_samples entries.
    std::vector<double> fallback_thresholds = {0.5, 0.6, 0.7};
    /// When feeding queues from matched labeled proposals, record the
    /// probability of the annotation's class. The alternative (false) records
    /// the proposal's max foreground probability instead.
    bool record_gt_class_prob = true;
    /// IoU floor for matching teacher predictions to labeled annotations.
    double match_iou = 0.5;

    int num_stages() const { return static_cast<int>(epsilons.size()); }
    void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const ApmConfig& config);
ApmConfig apm_config_from_json(const nlohmann::json& doc);

struct ClassStats {
    double mean = 0.0;
    double sigma = 0.0;  // population standard deviation (divide by n)
    std::size_t count = 0;
};

/// Per-class bounded FIFO queues of confidence values with derived
/// stage thresholds: tau_k(c) = clamp(mean_c + sigma_c * epsilon_k, 0, 1)
/// once a class has min_samples entries, the per-stage fallback before that.
class ClassStatsStore {
 public:
    ClassStatsStore() = default;
    ClassStatsStore(std::size_t num_classes, ApmConfig config);

    /// Appends one confidence value; the oldest entry is evicted when the
    /// queue is at capacity. Values outside [0,1] raise ValidationError;
    /// an out-of-range class index raises ReferentialIntegrityError.
    void record_confidence(int class_index, double confidence);

    ClassStats stats(int class_index) const;

    /// Threshold for a 1-based stage index. Pure function of the insertion
    /// history.
    double threshold(int class_index, int stage) const;

    /// [class][stage] threshold matrix (stages in ascending order).
    std::vector<std::vector<double>> threshold_table() const;

    std::size_t num_classes() const { return queues_.size(); }
    const ApmConfig& config() const { return config_; }

    nlohmann::json to_json() const;
    static ClassStatsStore from_json(const nlohmann::json& doc);

 private:
    void check_class(int class_index) const;

    ApmConfig config_;
    std::vector<std::deque<double>> queues_;
};

/// Feeds the store from teacher ensemble predictions on labeled images.
/// Detections are matched per image to annotations by greedy spatial
/// matching (score-descending, IoU >= config.match_iou); each matched
/// detection records the probability its vector assigns to the annotation's
/// class (or its max foreground probability under the config flag).
/// Unmatched detections record nothing. Updates are applied in
/// (image_id, record index) order.
void populate_from_labeled(ClassStatsStore& store,
                           std::span<const DetectionRecord> ensemble_predictions,
                           const DatasetBundle& labeled,
                           const CategoryIndex& index);

}  // namespace cascademine::apm
