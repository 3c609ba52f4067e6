#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascademine/apm.hpp"
#include "cascademine/cpl.hpp"
#include "cascademine/losses.hpp"
#include "cascademine/synthetic.hpp"
#include "cascademine/types.hpp"

namespace cascademine::toy {

/// One cascade stage: a linear-softmax classifier over C foreground classes
/// plus background, and a linear box-delta regressor.
struct StageHead {
    std::vector<double> w_cls;  // feature_dim x (C+1), row-major by feature
    std::vector<double> b_cls;  // C+1
    std::vector<double> w_reg;  // feature_dim x 4
    std::vector<double> b_reg;  // 4
};

struct ToyModel {
    int feature_dim = 0;
    int num_classes = 0;
    int num_stages = 0;
    std::vector<StageHead> stages;

    static ToyModel init(int feature_dim, int num_classes, int num_stages,
                         std::uint64_t seed);

    std::vector<double> logits(int stage, std::span<const double> features) const;
    std::vector<double> probs(int stage, std::span<const double> features) const;
    std::array<double, 4> reg_delta(int stage, std::span<const double> features) const;
    BBox predict_box(int stage, std::span<const double> features,
                     const BBox& proposal) const;
    /// Full stage prediction on one toy proposal, in detection-record form.
    DetectionRecord predict_record(int stage, const synthetic::ToyProposal& prop) const;

    nlohmann::json to_json() const;
    static ToyModel from_json(const nlohmann::json& doc);
};

enum class TeacherMode { self_per_head, ensemble };

const char* to_string(TeacherMode mode);
TeacherMode teacher_mode_from_string(const std::string& name);

struct TrainConfig {
    int total_iters = 300;
    /// -1 resolves to 20% of total_iters.
    int burn_in_iters = -1;
    bool use_unlabeled = true;
    double lambda_u = 1.0;
    TeacherMode teacher_mode = TeacherMode::ensemble;
    /// Class-adaptive thresholds on; off falls back to the fixed grids below.
    bool apm_on = true;
    /// Wide spread: a permissive first gate keeps coverage of hard classes,
    /// the strict last gate keeps the late stages clean.
    std::vector<double> fixed_stage_thresholds = {0.35, 0.55, 0.75};
    /// Fixed threshold of the self-teaching baseline (one per head).
    double fixed_tau = 0.7;
    /// Sigma multiplier when adaptive thresholds run without the cascade
    /// schedule (self mode uses one epsilon for every head). Above ~1.3 the
    /// per-class tau clamps to 1 for confident classes and retention dies.
    double self_epsilon = 1.2;
    int batch_labeled = 32;
    int batch_unlabeled = 32;
    double learning_rate = 0.1;
    losses::ClsKind cls_kind = losses::ClsKind::cross_entropy;
    losses::RegKind reg_kind = losses::RegKind::smooth_l1;
    apm::ApmConfig apm;
    std::uint64_t seed = 1;
    double divergence_threshold = 1e6;

    int resolved_burn_in() const {
        return burn_in_iters >= 0 ? burn_in_iters : total_iters / 5;
    }
    void validate(int num_stages) const;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& doc);
};

struct IterationRow {
    int iteration = 0;
    losses::LossBreakdown loss;
    std::vector<std::size_t> retained;  // per stage; empty while supervised
    /// Fraction of passing (proposal, stage) pseudo-targets whose class
    /// matches the audit truth; -1 while no pseudo-labels flow.
    double pseudo_accuracy = -1.0;
};

struct RunLog {
    std::vector<IterationRow> rows;
    std::string thresholds_csv;  // iteration,class_index,tau_1..tau_K

    std::string losses_csv(int num_stages) const;
};

struct TrainResult {
    ToyModel model;
    RunLog log;
    apm::ClassStatsStore store;  // final state of the active threshold store
    bool diverged = false;
    std::string diagnostic;
};

/// Observer hook, called once per iteration after the parameter step.
/// `pseudo` is null while training is supervised-only or when the teacher
/// runs per head (whose per-stage classes do not fit one gated set).
struct IterationState {
    int iteration;
    const ToyModel& model;
    const apm::ClassStatsStore& store;
    const cpl::PseudoLabelSet* pseudo;
    const losses::LossBreakdown& loss;
};
using Observer = std::function<void(const IterationState&)>;

/// Gradient-descent training of the K heads on the toy world: supervised
/// during burn-in, then pseudo-labeled unlabeled batches join with weight
/// lambda_u. lambda_u == 0 (or use_unlabeled == false) leaves the labeled
/// path bit-identical to a supervised-only run under the same seed.
/// Divergence (total loss above the threshold) stops training and flags the
/// result instead of throwing, so sweeps can report it.
TrainResult train(const synthetic::ToyWorld& world, const TrainConfig& config,
                  const Observer& observer = {});

struct EvalSummary {
    double overall_accuracy = 0.0;  // all proposals, background included
    std::map<std::string, double> group_accuracy;  // foreground, by class group
    std::map<std::string, std::size_t> group_counts;

    nlohmann::json to_json() const;
};

/// Accuracy of the head-ensemble prediction (argmax over the full vector,
/// background slot included) against the proposals' audit classes.
EvalSummary evaluate_toy(const ToyModel& model, const synthetic::ToyWorld& world,
                         std::span<const synthetic::ToyProposal> proposals);

struct AblationRow {
    std::string name;
    bool cpl = false;
    bool apm = false;
    double overall = 0.0;
    std::map<std::string, double> group_accuracy;
};

struct AblationTable {
    std::vector<AblationRow> rows;  // seed-means: baseline, +CPL, +APM, both
    double with_burn_in = 0.0;      // full config, seed-mean
    double without_burn_in = 0.0;
    std::vector<std::uint64_t> seeds;

    nlohmann::json to_json() const;
    std::string to_markdown() const;
};

/// Trains the four teacher/threshold configurations plus a no-burn-in
/// variant of the full one on a fresh world per seed, and reports held-out
/// accuracy means.
AblationTable ablation_suite(const synthetic::SyntheticConfig& world_config,
                             const TrainConfig& base,
                             std::span<const std::uint64_t> seeds);

}  // namespace cascademine::toy
