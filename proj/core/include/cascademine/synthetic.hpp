#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascademine/types.hpp"

namespace cascademine::synthetic {

/// Pixels per unit of normalized box delta: regression features and toy
/// regressor outputs live in delta = (target - proposal) / kDeltaScale.
inline constexpr double kDeltaScale = 32.0;

/// Additive per-group shifts applied to detector calibration laws; the
/// mechanism behind score distributions that lean toward frequent classes.
struct GroupBiases {
    double rare = -0.15;
    double common = -0.05;
    double frequent = 0.0;

    double of(ClassGroup group) const;
};

struct SyntheticConfig {
    int num_classes = 30;
    /// Class weights follow rank^(-exponent); 0 gives a uniform world.
    double power_law_exponent = 1.5;
    int num_images = 80;  // across both splits
    double labeled_fraction = 0.5;
    double objects_per_image = 6.0;  // Poisson mean, at least one object
    double image_size = 1024.0;
    int num_stages = 3;
    std::uint64_t seed = 7;

    // Detector oracle: the true-class score of a stage-k record is
    // clamp(mu + quality*(1-mu) + sigma*z, 0, 1) with
    // mu = score_base + score_stage_gain*(k-1) + score_bias(group).
    double score_base = 0.45;
    double score_stage_gain = 0.12;
    double score_sigma = 0.08;
    GroupBiases score_bias;
    // Probability that a stage-k record names the true class follows the
    // same shape; stages draw independently, which is what makes their
    // ensemble stronger than any single head.
    double accuracy_base = 0.55;
    double accuracy_stage_gain = 0.10;
    GroupBiases accuracy_bias;
    /// Stage-1 box jitter scale in pixels; later stages shrink it by 1/k and
    /// quality scales it by (1-quality). Corner offsets clamp to 12% of the
    /// box extent, which keeps IoU with the source box above 0.5.
    double box_jitter = 24.0;
    double false_positives_per_image = 2.0;
    // High enough that frequent-class junk crowds the permissive end of a
    // threshold sweep; the mild stage decay keeps it from surviving the
    // stricter gates.
    double fp_score_base = 0.50;
    double fp_score_stage_gain = -0.03;

    // Toy feature world: per-proposal features are a class prototype plus
    // stage-specific noise, concatenated with the normalized box delta.
    int class_feature_dim = 12;
    double feature_noise = 1.3;
    double rare_noise_multiplier = 1.5;
    double background_proposals_per_image = 2.0;
    int heldout_images = 40;

    int feature_dim() const { return class_feature_dim + 4; }
    void validate() const;  // throws ConfigError

    nlohmann::json to_json() const;
    static SyntheticConfig from_json(const nlohmann::json& doc);
};

/// Labeled split, the public (annotation-free) view of the unlabeled split,
/// and the unlabeled split's ground truth behind the audit wall. Both
/// category tables carry world-level instance counts and groups so the two
/// splits agree on which classes are rare.
struct GeneratedDataset {
    DatasetBundle labeled;
    DatasetBundle unlabeled;
    HiddenAnnotations hidden;
};

GeneratedDataset generate_dataset(const SyntheticConfig& config);

/// World-level group per dense class index, recomputed from labeled plus
/// hidden annotations.
std::vector<ClassGroup> world_groups(const GeneratedDataset& data, GroupScheme scheme);

/// Emits K aligned stage records per ground-truth object plus false
/// positives, under the calibration laws above. quality in [0,1] sweeps
/// from the configured noise level to a perfect detector. Deterministic:
/// each image consumes its own substream with a fixed draw order.
std::vector<DetectionRecord> simulate_detector(std::span<const ImageInfo> images,
                                               std::span<const Annotation> gt,
                                               std::span<const ClassGroup> groups_by_class,
                                               const CategoryIndex& index,
                                               const SyntheticConfig& config,
                                               double quality);

/// Convenience overload running on one split of a generated dataset (the
/// unlabeled split reads its hidden annotations).
std::vector<DetectionRecord> simulate_detector(const GeneratedDataset& data, Split split,
                                               const SyntheticConfig& config,
                                               double quality);

/// Jitters each corner by scale*z, clamped to 12% of the box extent per
/// axis, then snaps to the 1/64 grid. Draws exactly four normals.
BBox jitter_box(const BBox& box, double scale, std::mt19937_64& g);

/// One proposal of the toy feature world. true_class is the dense class
/// index (-1 for background proposals); for unlabeled proposals it exists
/// for auditing only and must never reach the training objective.
struct ToyProposal {
    std::int64_t image_id = 0;
    std::int64_t proposal_id = -1;
    int true_class = -1;
    BBox gt_box;
    BBox proposal_box;
    std::vector<std::vector<double>> stage_features;  // one view per stage
};

struct ToyWorld {
    DatasetBundle labeled;
    DatasetBundle unlabeled;
    HiddenAnnotations hidden;
    CategoryIndex index;
    std::vector<ClassGroup> class_groups;  // per dense class index
    std::vector<ToyProposal> labeled_proposals;
    std::vector<ToyProposal> unlabeled_proposals;
    std::vector<ToyProposal> heldout_proposals;
    int num_stages = 3;
    int feature_dim = 16;
};

/// Builds the full closed-loop substrate: datasets, per-proposal stage
/// features for both splits, and a held-out proposal set for final
/// accuracy. Stage views carry independent noise that shrinks with the
/// stage index, so later heads are stronger and the heads disagree enough
/// for their ensemble to beat each of them.
ToyWorld generate_toy_world(const SyntheticConfig& config);

}  // namespace cascademine::synthetic
