#include "cascademine/saod.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "cascademine/geometry.hpp"
#include "cascademine/rng.hpp"

namespace cascademine::saod {

namespace {

struct GroupTally {
    std::size_t classes_original = 0;
    std::size_t classes_retained = 0;
    std::size_t anns_original = 0;
    std::size_t anns_retained = 0;
};

}  // namespace

ErasureResult erase(const DatasetBundle& bundle, double ratio, std::uint64_t seed,
                    GroupScheme scheme) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw ValidationError("erasure ratio must lie in [0,1]");
    }

    std::map<int, std::vector<std::size_t>> by_category;  // indexes into annotations
    for (std::size_t i = 0; i < bundle.annotations.size(); ++i) {
        by_category[bundle.annotations[i].category_id].push_back(i);
    }

    const std::uint64_t stream = rng::stream_for(seed, "erase");
    std::set<std::size_t> erased_idx;
    for (auto& [category_id, idx] : by_category) {
        const std::size_t n_remove =
            static_cast<std::size_t>(std::floor(ratio * static_cast<double>(idx.size())));
        if (n_remove == 0) continue;
        // Partial Fisher-Yates over this category's annotation list.
        std::mt19937_64 g(rng::mix(stream, static_cast<std::uint64_t>(category_id)));
        std::vector<std::size_t> pool = idx;
        for (std::size_t j = 0; j < n_remove; ++j) {
            const std::size_t pick =
                j + static_cast<std::size_t>(rng::uniform01(g) *
                                             static_cast<double>(pool.size() - j));
            std::swap(pool[j], pool[std::min(pick, pool.size() - 1)]);
            erased_idx.insert(pool[j]);
        }
    }

    ErasureResult out;
    out.sparse.split = bundle.split;
    out.sparse.images = bundle.images;
    out.sparse.categories = bundle.categories;
    std::vector<Annotation> erased;
    for (std::size_t i = 0; i < bundle.annotations.size(); ++i) {
        if (erased_idx.contains(i)) {
            erased.push_back(bundle.annotations[i]);
        } else {
            out.sparse.annotations.push_back(bundle.annotations[i]);
        }
    }

    // Preservation statistics against the original counts.
    std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // original, retained
    for (const Annotation& ann : bundle.annotations) ++per_class[ann.category_id].first;
    for (const Annotation& ann : out.sparse.annotations) {
        ++per_class[ann.category_id].second;
    }

    std::map<std::string, GroupTally> tallies;
    GroupTally overall;
    for (const auto& [category_id, counts] : per_class) {
        const auto [original, retained] = counts;
        if (original == 0) continue;
        const std::string group = to_string(
            group_for_count(static_cast<std::int64_t>(original), scheme));
        for (GroupTally* t : {&tallies[group], &overall}) {
            t->classes_original += 1;
            t->classes_retained += retained > 0 ? 1 : 0;
            t->anns_original += original;
            t->anns_retained += retained;
        }
    }

    ErasureReport& report = out.report;
    report.ratio = ratio;
    report.seed = seed;
    report.original_annotations = bundle.annotations.size();
    report.erased_annotations = erased.size();
    for (const Annotation& ann : erased) report.erased_annotation_ids.push_back(ann.id);
    std::sort(report.erased_annotation_ids.begin(), report.erased_annotation_ids.end());

    auto class_fraction = [](const GroupTally& t) {
        return t.classes_original == 0 ? 1.0
                                       : static_cast<double>(t.classes_retained) /
                                             static_cast<double>(t.classes_original);
    };
    auto ann_fraction = [](const GroupTally& t) {
        return t.anns_original == 0 ? 1.0
                                    : static_cast<double>(t.anns_retained) /
                                          static_cast<double>(t.anns_original);
    };
    report.class_preservation = class_fraction(overall);
    report.annotation_preservation = ann_fraction(overall);
    for (const auto& [group, tally] : tallies) {
        report.class_preservation_per_group[group] = class_fraction(tally);
        report.annotation_preservation_per_group[group] = ann_fraction(tally);
    }

    out.sparse = assign_class_groups(std::move(out.sparse), scheme);
    out.erased = HiddenAnnotations(std::move(erased));
    return out;
}

double recovery_score(const cpl::PseudoLabelSet& pseudo,
                      std::span<const Annotation> erased, const CategoryIndex& index,
                      double iou_threshold) {
    if (erased.empty()) return 1.0;

    // (image, class) cells of erased annotations and of retained labels.
    std::map<std::pair<std::int64_t, int>, std::vector<const Annotation*>> ann_cells;
    for (const Annotation& ann : erased) {
        ann_cells[{ann.image_id, index.index_of(ann.category_id)}].push_back(&ann);
    }
    std::map<std::pair<std::int64_t, int>, std::vector<const cpl::PseudoLabel*>> label_cells;
    for (const cpl::PseudoLabel& l : pseudo.labels) {
        if (!l.retained_anywhere()) continue;
        label_cells[{l.target.image_id, l.target.y_hat}].push_back(&l);
    }

    std::size_t recovered = 0;
    for (const auto& [cell, anns] : ann_cells) {
        const auto it = label_cells.find(cell);
        if (it == label_cells.end()) continue;
        std::vector<ScoredBox> boxes;
        boxes.reserve(it->second.size());
        for (const cpl::PseudoLabel* l : it->second) {
            boxes.push_back({l->target.b_t, l->target.q_t, l->target.y_hat});
        }
        std::vector<BBox> gt;
        gt.reserve(anns.size());
        for (const Annotation* a : anns) gt.push_back(a->box);
        recovered += greedy_match(boxes, gt, iou_threshold).pairs.size();
    }
    return static_cast<double>(recovered) / static_cast<double>(erased.size());
}

nlohmann::json ErasureReport::to_json() const {
    return {{"ratio", ratio},
            {"seed", seed},
            {"original_annotations", original_annotations},
            {"erased_annotations", erased_annotations},
            {"erased_annotation_ids", erased_annotation_ids},
            {"class_preservation", class_preservation},
            {"class_preservation_per_group", class_preservation_per_group},
            {"annotation_preservation", annotation_preservation},
            {"annotation_preservation_per_group", annotation_preservation_per_group}};
}

}  // namespace cascademine::saod
