#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascademine/cpl.hpp"
#include "cascademine/types.hpp"

namespace cascademine::saod {

/// Statistics of one erasure pass. Two preservation views are reported:
/// class-level (fraction of originally populated classes that keep at least
/// one annotation; exact-count erasure keeps this at 1 for every ratio
/// below 1) and annotation-level (retained / original), which falls
/// strictly as the ratio grows.
struct ErasureReport {
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::size_t original_annotations = 0;
    std::size_t erased_annotations = 0;
    std::vector<std::int64_t> erased_annotation_ids;
    double class_preservation = 1.0;
    std::map<std::string, double> class_preservation_per_group;
    double annotation_preservation = 1.0;
    std::map<std::string, double> annotation_preservation_per_group;

    nlohmann::json to_json() const;
};

struct ErasureResult {
    DatasetBundle sparse;
    HiddenAnnotations erased;  // the recovery target
    ErasureReport report;
};

/// Removes exactly floor(ratio * n_c) annotations per category, uniformly
/// at random under the seed. Groups in the report come from the original
/// (pre-erasure) counts under the given scheme; the sparse bundle's own
/// category table is recounted from what remains.
ErasureResult erase(const DatasetBundle& bundle, double ratio, std::uint64_t seed,
                    GroupScheme scheme = GroupScheme::lvis3);

/// Fraction of erased annotations recovered by a correct-class pseudo-label
/// at IoU >= threshold, via per-(image, class) greedy matching over labels
/// retained at any stage. Returns 1 when nothing was erased.
double recovery_score(const cpl::PseudoLabelSet& pseudo,
                      std::span<const Annotation> erased, const CategoryIndex& index,
                      double iou_threshold);

}  // namespace cascademine::saod
