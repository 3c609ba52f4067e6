#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascademine/apm.hpp"
#include "cascademine/types.hpp"

namespace cascademine::cpl {

/// Ensemble teacher prediction for one proposal: the arithmetic mean of the
/// K stage probability vectors and the coordinate-wise mean of the K stage
/// boxes. q_t is the max foreground entry, y_hat its class index.
/// `background` marks proposals whose overall argmax (foreground plus the
/// background slot) is background; such targets are never retained.
struct TeacherTarget {
    std::int64_t image_id = 0;
    std::int64_t proposal_id = -1;
    std::vector<double> p_t;
    BBox b_t;
    double q_t = 0.0;
    int y_hat = -1;
    bool background = false;
};

/// One teacher target with its per-stage pass flags (pass[k-1] is stage k).
struct PseudoLabel {
    TeacherTarget target;
    std::vector<bool> stage_pass;

    bool retained_anywhere() const {
        for (bool p : stage_pass)
            if (p) return true;
        return false;
    }
};

struct PseudoLabelSet {
    int num_stages = 0;
    std::vector<PseudoLabel> labels;

    /// Indexes into `labels` retained at the given 1-based stage.
    std::vector<std::size_t> retained_at(int stage) const;
    std::vector<std::size_t> retained_counts() const;  // per stage
};

struct GateConfig {
    /// Suppress duplicate ensemble targets per image and class before gating.
    bool nms_before_gating = true;
    double nms_iou = 0.5;
};

/// Averages one proposal's stage records. The records must agree on
/// image_id, proposal_id, and probability-vector arity, and their stage tags
/// must be a permutation of 1..K; anything else raises AlignmentError. The
/// result does not depend on record order.
TeacherTarget ensemble(std::span<const DetectionRecord> chain);

/// Wraps a single stage record as a degenerate one-head teacher; the
/// self-training baseline where each head teaches itself.
TeacherTarget from_single(const DetectionRecord& record);

/// Ensembles a flat batch of stage records grouped by (image_id,
/// proposal_id). Every proposal must carry exactly num_stages records.
/// Output is ordered by (image_id, proposal_id).
std::vector<TeacherTarget> ensemble_batch(std::span<const DetectionRecord> records,
                                          int num_stages);

/// Gates targets against per-class adaptive thresholds: a target passes
/// stage k iff q_t >= tau_k(y_hat), inclusive. Background-argmax targets
/// are kept in the set with an all-false mask so they are excluded from
/// every stage but still auditable.
PseudoLabelSet gate(std::vector<TeacherTarget> targets, const apm::ClassStatsStore& store);

/// Same gating against one class-agnostic threshold per stage.
PseudoLabelSet gate_fixed(std::vector<TeacherTarget> targets,
                          std::span<const double> stage_thresholds);

/// ensemble_batch + optional per-image NMS + gate, the full teacher step
/// for one unlabeled batch. NMS ranks targets by q_t and suppresses within
/// (image, y_hat) groups; suppressed targets drop out of the set entirely.
PseudoLabelSet unlabeled_batch(std::span<const DetectionRecord> records,
                               const apm::ClassStatsStore& store,
                               const GateConfig& config = {});

/// Results-dialect serialization: rows {image_id, proposal_id, category_id,
/// bbox [x,y,w,h], score, stage_mask, q_t} with score = q_t and bit k-1 of
/// stage_mask set when stage k retained the label. Rows with an all-zero
/// mask (background or below every threshold) are skipped unless
/// include_rejected is set.
nlohmann::json pseudo_to_json(const PseudoLabelSet& set, const CategoryIndex& index,
                              bool include_rejected = false);

/// Rebuilds a set from its serialized form. Full probability vectors are
/// not part of the dialect, so p_t comes back empty; q_t, the class, the
/// box, and the mask round-trip exactly.
PseudoLabelSet pseudo_from_json(const nlohmann::json& doc, const CategoryIndex& index,
                                int num_stages);

}  // namespace cascademine::cpl
