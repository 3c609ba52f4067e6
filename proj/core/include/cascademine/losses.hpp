#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cascademine/types.hpp"

namespace cascademine::losses {

enum class ClsKind { cross_entropy, focal };
enum class RegKind { smooth_l1, l1_plus_giou };

struct FocalParams {
    double alpha = 0.25;
    double gamma = 2.0;
};

/// Floor applied to the target-class probability before the log; hitting it
/// sets the `clamped` flag on the result.
inline constexpr double kProbFloor = 1e-12;

struct ClsLossResult {
    double value = 0.0;
    bool clamped = false;
};

/// Classification loss of one probability vector against a target slot
/// (foreground class or the background slot).
///   cross_entropy: -log p[target]
///   focal:         -alpha * (1 - p_t)^gamma * log p_t
ClsLossResult cls_loss(std::span<const double> probs, int target, ClsKind kind,
                       const FocalParams& fp = {});

/// Gradient of cls_loss with respect to the logits that produced `probs`
/// through a softmax. For cross-entropy this is the classic p_j - [j==t].
std::vector<double> cls_grad_logits(std::span<const double> probs, int target,
                                    ClsKind kind, const FocalParams& fp = {});

/// Regression loss between predicted and target corner boxes.
///   smooth_l1:    sum over the 4 corner deltas, beta = 1
///   l1_plus_giou: mean absolute corner delta + (1 - giou)
double reg_loss(const BBox& pred, const BBox& target, RegKind kind);

/// Gradient of reg_loss with respect to the predicted corners
/// (x_min, y_min, x_max, y_max). Not defined at the smooth-l1 kink; the
/// subgradient used there is the linear branch.
std::array<double, 4> reg_grad(const BBox& pred, const BBox& target, RegKind kind);

/// Composite objective terms of one iteration. Unlabeled terms carry the
/// multiplier inside `total` only.
struct LossBreakdown {
    double cls_labeled = 0.0;
    double reg_labeled = 0.0;
    double cls_unlabeled = 0.0;
    double reg_unlabeled = 0.0;
    double lambda_u = 1.0;
    double total = 0.0;

    static std::string csv_header();  // "iteration,cls_labeled,..."
    std::string csv_row(std::size_t iteration) const;
};

/// Accumulates per-proposal loss terms (each already summed over the K
/// stages) and normalizes each side by its proposal count, so batch size
/// does not scale the objective.
class LossAccumulator {
 public:
    void add_labeled(double cls, double reg);
    void add_unlabeled(double cls, double reg);
    std::size_t labeled_count() const { return n_labeled_; }
    std::size_t unlabeled_count() const { return n_unlabeled_; }
    LossBreakdown finalize(double lambda_u) const;

 private:
    double cls_labeled_ = 0.0, reg_labeled_ = 0.0;
    double cls_unlabeled_ = 0.0, reg_unlabeled_ = 0.0;
    std::size_t n_labeled_ = 0, n_unlabeled_ = 0;
};

/// Per-proposal terms already summed over stages.
struct ProposalTerms {
    double cls = 0.0;
    double reg = 0.0;
};

LossBreakdown batch_losses(std::span<const ProposalTerms> labeled,
                           std::span<const ProposalTerms> unlabeled_gated,
                           double lambda_u);

}  // namespace cascademine::losses
