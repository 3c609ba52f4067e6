#include "cascademine/cpl.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <utility>

#include "cascademine/geometry.hpp"

namespace cascademine::cpl {

namespace {

TeacherTarget classify_target(TeacherTarget t) {
    t.y_hat = argmax_foreground(t.p_t);
    t.q_t = t.p_t[t.y_hat];
    // A tie between background and the best foreground class resolves to
    // foreground, mirroring the inclusive gate comparison.
    t.background = t.p_t.back() > t.q_t;
    return t;
}

template <typename ThresholdFn>
PseudoLabelSet gate_impl(std::vector<TeacherTarget> targets, int num_stages,
                         ThresholdFn&& tau) {
    PseudoLabelSet set;
    set.num_stages = num_stages;
    set.labels.reserve(targets.size());
    for (TeacherTarget& t : targets) {
        PseudoLabel label;
        label.stage_pass.assign(num_stages, false);
        if (!t.background) {
            for (int k = 1; k <= num_stages; ++k) {
                label.stage_pass[k - 1] = t.q_t >= tau(t.y_hat, k);
            }
        }
        label.target = std::move(t);
        set.labels.push_back(std::move(label));
    }
    return set;
}

}  // namespace

std::vector<std::size_t> PseudoLabelSet::retained_at(int stage) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].stage_pass.at(stage - 1)) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> PseudoLabelSet::retained_counts() const {
    std::vector<std::size_t> counts(num_stages, 0);
    for (const PseudoLabel& l : labels) {
        for (int k = 0; k < num_stages; ++k) {
            if (l.stage_pass[k]) ++counts[k];
        }
    }
    return counts;
}

TeacherTarget ensemble(std::span<const DetectionRecord> chain) {
    if (chain.empty()) throw AlignmentError("empty stage chain");
    const std::size_t k = chain.size();
    const DetectionRecord& first = chain.front();
    if (first.class_probs.size() < 2) {
        throw ValidationError("stage records need at least one foreground class");
    }

    std::set<int> stages;
    for (const DetectionRecord& rec : chain) {
        if (rec.image_id != first.image_id || rec.proposal_id != first.proposal_id) {
            throw AlignmentError(
                "stage chain mixes proposals: image " + std::to_string(rec.image_id) +
                " proposal " + std::to_string(rec.proposal_id) + " vs image " +
                std::to_string(first.image_id) + " proposal " +
                std::to_string(first.proposal_id));
        }
        if (rec.class_probs.size() != first.class_probs.size()) {
            throw AlignmentError("stage chain mixes probability arities");
        }
        stages.insert(rec.stage);
    }
    bool tags_ok = stages.size() == k;
    for (int s = 1; tags_ok && s <= static_cast<int>(k); ++s) tags_ok = stages.contains(s);
    if (!tags_ok) {
        throw AlignmentError("stage tags of proposal " + std::to_string(first.proposal_id) +
                             " are not a permutation of 1.." + std::to_string(k));
    }

    TeacherTarget t;
    t.image_id = first.image_id;
    t.proposal_id = first.proposal_id;
    t.p_t.assign(first.class_probs.size(), 0.0);
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    for (const DetectionRecord& rec : chain) {
        for (std::size_t j = 0; j < t.p_t.size(); ++j) t.p_t[j] += rec.class_probs[j];
        x_min += rec.box.x_min;
        y_min += rec.box.y_min;
        x_max += rec.box.x_max;
        y_max += rec.box.y_max;
    }
    const double inv = 1.0 / static_cast<double>(k);
    for (double& v : t.p_t) v *= inv;
    t.b_t = BBox{x_min * inv, y_min * inv, x_max * inv, y_max * inv};
    return classify_target(std::move(t));
}

TeacherTarget from_single(const DetectionRecord& record) {
    TeacherTarget t;
    t.image_id = record.image_id;
    t.proposal_id = record.proposal_id;
    t.p_t = record.class_probs;
    t.b_t = record.box;
    return classify_target(std::move(t));
}

std::vector<TeacherTarget> ensemble_batch(std::span<const DetectionRecord> records,
                                          int num_stages) {
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<DetectionRecord>> chains;
    for (const DetectionRecord& rec : records) {
        chains[{rec.image_id, rec.proposal_id}].push_back(rec);
    }
    std::vector<TeacherTarget> out;
    out.reserve(chains.size());
    for (const auto& [key, chain] : chains) {
        if (static_cast<int>(chain.size()) != num_stages) {
            throw AlignmentError("proposal " + std::to_string(key.second) + " of image " +
                                 std::to_string(key.first) + " has " +
                                 std::to_string(chain.size()) + " stage records, expected " +
                                 std::to_string(num_stages));
        }
        out.push_back(ensemble(chain));
    }
    return out;
}

PseudoLabelSet gate(std::vector<TeacherTarget> targets, const apm::ClassStatsStore& store) {
    return gate_impl(std::move(targets), store.config().num_stages(),
                     [&store](int c, int k) { return store.threshold(c, k); });
}

PseudoLabelSet gate_fixed(std::vector<TeacherTarget> targets,
                          std::span<const double> stage_thresholds) {
    if (stage_thresholds.empty()) throw ConfigError("gate_fixed needs at least one threshold");
    return gate_impl(std::move(targets), static_cast<int>(stage_thresholds.size()),
                     [stage_thresholds](int, int k) { return stage_thresholds[k - 1]; });
}

PseudoLabelSet unlabeled_batch(std::span<const DetectionRecord> records,
                               const apm::ClassStatsStore& store, const GateConfig& config) {
    std::vector<TeacherTarget> targets = ensemble_batch(records, store.config().num_stages());
    if (config.nms_before_gating) {
        std::vector<TeacherTarget> survivors;
        survivors.reserve(targets.size());
        auto flush_image = [&](std::size_t begin, std::size_t end) {
            std::vector<ScoredBox> boxes;
            std::vector<std::size_t> origin;
            for (std::size_t i = begin; i < end; ++i) {
                if (targets[i].background) continue;
                boxes.push_back({targets[i].b_t, targets[i].q_t, targets[i].y_hat});
                origin.push_back(i);
            }
            std::vector<bool> keep(end - begin, false);
            for (std::size_t i = begin; i < end; ++i) keep[i - begin] = targets[i].background;
            for (std::size_t idx : nms_indices(boxes, config.nms_iou)) {
                keep[origin[idx] - begin] = true;
            }
            for (std::size_t i = begin; i < end; ++i) {
                if (keep[i - begin]) survivors.push_back(std::move(targets[i]));
            }
        };
        std::size_t begin = 0;
        for (std::size_t i = 1; i <= targets.size(); ++i) {
            if (i == targets.size() || targets[i].image_id != targets[begin].image_id) {
                flush_image(begin, i);
                begin = i;
            }
        }
        targets = std::move(survivors);
    }
    return gate(std::move(targets), store);
}

nlohmann::json pseudo_to_json(const PseudoLabelSet& set, const CategoryIndex& index,
                              bool include_rejected) {
    nlohmann::json arr = nlohmann::json::array();
    for (const PseudoLabel& l : set.labels) {
        std::uint32_t mask = 0;
        for (int k = 0; k < set.num_stages; ++k) {
            if (l.stage_pass[k]) mask |= 1u << k;
        }
        if (mask == 0 && !include_rejected) continue;
        const BBox& b = l.target.b_t;
        nlohmann::json row = {
            {"image_id", l.target.image_id},
            {"proposal_id", l.target.proposal_id},
            {"category_id", index.id_of(l.target.y_hat)},
            {"bbox", {b.x_min, b.y_min, b.x_max - b.x_min, b.y_max - b.y_min}},
            {"score", l.target.q_t},
            {"stage_mask", mask},
            {"q_t", l.target.q_t}};
        if (include_rejected) row["background"] = l.target.background;
        arr.push_back(std::move(row));
    }
    return arr;
}

PseudoLabelSet pseudo_from_json(const nlohmann::json& doc, const CategoryIndex& index,
                                int num_stages) {
    if (!doc.is_array()) throw ValidationError("pseudo-label payload must be an array");
    PseudoLabelSet set;
    set.num_stages = num_stages;
    for (const nlohmann::json& row : doc) {
        PseudoLabel l;
        l.target.image_id = row.at("image_id").get<std::int64_t>();
        l.target.proposal_id = row.value("proposal_id", std::int64_t{-1});
        l.target.y_hat = index.index_of(row.at("category_id").get<int>());
        const nlohmann::json& bbox = row.at("bbox");
        if (!bbox.is_array() || bbox.size() != 4) {
            throw ValidationError("pseudo-label row: bbox must be [x, y, width, height]");
        }
        const double x = bbox[0].get<double>();
        const double y = bbox[1].get<double>();
        l.target.b_t = BBox{x, y, x + bbox[2].get<double>(), y + bbox[3].get<double>()};
        l.target.q_t = row.at("q_t").get<double>();
        l.target.background = row.value("background", false);
        const auto mask = row.at("stage_mask").get<std::uint32_t>();
        l.stage_pass.assign(num_stages, false);
        for (int k = 0; k < num_stages; ++k) l.stage_pass[k] = (mask >> k) & 1u;
        set.labels.push_back(std::move(l));
    }
    return set;
}

}  // namespace cascademine::cpl
