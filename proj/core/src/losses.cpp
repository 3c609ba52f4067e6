#include "cascademine/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cascademine/coco_io.hpp"
#include "cascademine/geometry.hpp"

namespace cascademine::losses {

namespace {

constexpr double kSmoothL1Beta = 1.0;

double checked_target_prob(std::span<const double> probs, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= probs.size()) {
        throw ValidationError("loss target slot " + std::to_string(target) +
                              " out of range for " + std::to_string(probs.size()) +
                              " probabilities");
    }
    return probs[target];
}

std::array<double, 4> corner_deltas(const BBox& pred, const BBox& target) {
    return {pred.x_min - target.x_min, pred.y_min - target.y_min,
            pred.x_max - target.x_max, pred.y_max - target.y_max};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

ClsLossResult cls_loss(std::span<const double> probs, int target, ClsKind kind,
                       const FocalParams& fp) {
    ClsLossResult out;
    double p = checked_target_prob(probs, target);
    if (p < kProbFloor) {
        p = kProbFloor;
        out.clamped = true;
    }
    switch (kind) {
        case ClsKind::cross_entropy:
            out.value = -std::log(p);
            break;
        case ClsKind::focal:
            out.value = -fp.alpha * std::pow(1.0 - p, fp.gamma) * std::log(p);
            break;
    }
    return out;
}

std::vector<double> cls_grad_logits(std::span<const double> probs, int target,
                                    ClsKind kind, const FocalParams& fp) {
    const double raw = checked_target_prob(probs, target);
    const double p = std::max(raw, kProbFloor);
    std::vector<double> grad(probs.size(), 0.0);
    switch (kind) {
        case ClsKind::cross_entropy:
            // d(-log softmax_t)/dz_j = p_j - [j == t]
            for (std::size_t j = 0; j < probs.size(); ++j) grad[j] = probs[j];
            grad[target] -= 1.0;
            break;
        case ClsKind::focal: {
            const double one_m = 1.0 - p;
            const double dl_dp = fp.alpha * fp.gamma * std::pow(one_m, fp.gamma - 1.0) *
                                     std::log(p) -
                                 fp.alpha * std::pow(one_m, fp.gamma) / p;
            for (std::size_t j = 0; j < probs.size(); ++j) {
                const double dpt_dzj =
                    p * ((static_cast<int>(j) == target ? 1.0 : 0.0) - probs[j]);
                grad[j] = dl_dp * dpt_dzj;
            }
            break;
        }
    }
    return grad;
}

double reg_loss(const BBox& pred, const BBox& target, RegKind kind) {
    const std::array<double, 4> d = corner_deltas(pred, target);
    switch (kind) {
        case RegKind::smooth_l1: {
            double sum = 0.0;
            for (double v : d) {
                const double a = std::abs(v);
                sum += a < kSmoothL1Beta ? 0.5 * v * v / kSmoothL1Beta
                                         : a - 0.5 * kSmoothL1Beta;
            }
            return sum;
        }
        case RegKind::l1_plus_giou: {
            double l1 = 0.0;
            for (double v : d) l1 += std::abs(v);
            return l1 / 4.0 + (1.0 - giou(pred, target));
        }
    }
    return 0.0;  // unreachable
}

std::array<double, 4> reg_grad(const BBox& pred, const BBox& target, RegKind kind) {
    const std::array<double, 4> d = corner_deltas(pred, target);
    std::array<double, 4> grad{};
    switch (kind) {
        case RegKind::smooth_l1:
            for (int i = 0; i < 4; ++i) {
                grad[i] = std::abs(d[i]) < kSmoothL1Beta ? d[i] / kSmoothL1Beta : sign(d[i]);
            }
            break;
        case RegKind::l1_plus_giou: {
            const std::array<double, 4> g = giou_grad_first(pred, target);
            for (int i = 0; i < 4; ++i) grad[i] = sign(d[i]) / 4.0 - g[i];
            break;
        }
    }
    return grad;
}

std::string LossBreakdown::csv_header() {
    return "iteration,cls_labeled,reg_labeled,cls_unlabeled,reg_unlabeled,total";
}

std::string LossBreakdown::csv_row(std::size_t iteration) const {
    std::string row = std::to_string(iteration);
    for (double v : {cls_labeled, reg_labeled, cls_unlabeled, reg_unlabeled, total}) {
        row += ',';
        row += format_double(v);
    }
    return row;
}

void LossAccumulator::add_labeled(double cls, double reg) {
    cls_labeled_ += cls;
    reg_labeled_ += reg;
    ++n_labeled_;
}

void LossAccumulator::add_unlabeled(double cls, double reg) {
    cls_unlabeled_ += cls;
    reg_unlabeled_ += reg;
    ++n_unlabeled_;
}

LossBreakdown LossAccumulator::finalize(double lambda_u) const {
    LossBreakdown out;
    const double nl = static_cast<double>(std::max<std::size_t>(n_labeled_, 1));
    const double nu = static_cast<double>(std::max<std::size_t>(n_unlabeled_, 1));
    out.cls_labeled = cls_labeled_ / nl;
    out.reg_labeled = reg_labeled_ / nl;
    out.cls_unlabeled = cls_unlabeled_ / nu;
    out.reg_unlabeled = reg_unlabeled_ / nu;
    out.lambda_u = lambda_u;
    out.total = out.cls_labeled + out.reg_labeled +
                lambda_u * (out.cls_unlabeled + out.reg_unlabeled);
    return out;
}

LossBreakdown batch_losses(std::span<const ProposalTerms> labeled,
                           std::span<const ProposalTerms> unlabeled_gated,
                           double lambda_u) {
    LossAccumulator acc;
    for (const ProposalTerms& t : labeled) acc.add_labeled(t.cls, t.reg);
    for (const ProposalTerms& t : unlabeled_gated) acc.add_unlabeled(t.cls, t.reg);
    return acc.finalize(lambda_u);
}

}  // namespace cascademine::losses
