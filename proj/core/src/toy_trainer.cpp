#include "cascademine/toy_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <utility>

#include "cascademine/coco_io.hpp"
#include "cascademine/rng.hpp"

namespace cascademine::toy {

namespace {

void check_stage(int stage, int num_stages) {
    if (stage < 1 || stage > num_stages) {
        throw ValidationError("stage " + std::to_string(stage) + " outside 1.." +
                              std::to_string(num_stages));
    }
}

// Accumulated parameter gradients of one head, same layout as StageHead.
struct HeadGrads {
    std::vector<double> w_cls, b_cls, w_reg, b_reg;

    explicit HeadGrads(int feature_dim, int num_classes)
        : w_cls(static_cast<std::size_t>(feature_dim) * (num_classes + 1), 0.0),
          b_cls(num_classes + 1, 0.0),
          w_reg(static_cast<std::size_t>(feature_dim) * 4, 0.0),
          b_reg(4, 0.0) {}

    void add_cls(std::span<const double> features, std::span<const double> g_logits) {
        const std::size_t cols = b_cls.size();
        for (std::size_t d = 0; d < features.size(); ++d) {
            const double f = features[d];
            double* row = w_cls.data() + d * cols;
            for (std::size_t j = 0; j < cols; ++j) row[j] += f * g_logits[j];
        }
        for (std::size_t j = 0; j < cols; ++j) b_cls[j] += g_logits[j];
    }

    void add_reg(std::span<const double> features, const std::array<double, 4>& g_delta) {
        for (std::size_t d = 0; d < features.size(); ++d) {
            const double f = features[d];
            double* row = w_reg.data() + d * 4;
            for (int i = 0; i < 4; ++i) row[i] += f * g_delta[i];
        }
        for (int i = 0; i < 4; ++i) b_reg[i] += g_delta[i];
    }
};

void apply_step(StageHead& head, const HeadGrads& labeled, const HeadGrads& unlabeled,
                double scale_l, double scale_u) {
    auto apply = [&](std::vector<double>& p, const std::vector<double>& gl,
                     const std::vector<double>& gu) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= scale_l * gl[i] + scale_u * gu[i];
        }
    };
    apply(head.w_cls, labeled.w_cls, unlabeled.w_cls);
    apply(head.b_cls, labeled.b_cls, unlabeled.b_cls);
    apply(head.w_reg, labeled.w_reg, unlabeled.w_reg);
    apply(head.b_reg, labeled.b_reg, unlabeled.b_reg);
}

struct RegTerm {
    double loss = 0.0;
    std::array<double, 4> grad{};  // with respect to the raw delta output
};

// Regression term of one (proposal, stage) pair. The corner-delta objective
// is evaluated in the normalized delta space the head predicts in; the
// overlap-based objective needs real pixel boxes, so the chain rule carries
// the delta scale back.
RegTerm reg_term(losses::RegKind kind, const BBox& proposal,
                 const std::array<double, 4>& delta, const BBox& target) {
    RegTerm out;
    if (kind == losses::RegKind::smooth_l1) {
        const BBox pred{delta[0], delta[1], delta[2], delta[3]};
        const BBox tgt{(target.x_min - proposal.x_min) / synthetic::kDeltaScale,
                       (target.y_min - proposal.y_min) / synthetic::kDeltaScale,
                       (target.x_max - proposal.x_max) / synthetic::kDeltaScale,
                       (target.y_max - proposal.y_max) / synthetic::kDeltaScale};
        out.loss = losses::reg_loss(pred, tgt, kind);
        out.grad = losses::reg_grad(pred, tgt, kind);
    } else {
        const BBox pred{proposal.x_min + synthetic::kDeltaScale * delta[0],
                        proposal.y_min + synthetic::kDeltaScale * delta[1],
                        proposal.x_max + synthetic::kDeltaScale * delta[2],
                        proposal.y_max + synthetic::kDeltaScale * delta[3]};
        out.loss = losses::reg_loss(pred, target, kind);
        const std::array<double, 4> g = losses::reg_grad(pred, target, kind);
        for (int i = 0; i < 4; ++i) out.grad[i] = g[i] * synthetic::kDeltaScale;
    }
    return out;
}

std::size_t draw_index(std::mt19937_64& g, std::size_t n) {
    const auto idx = static_cast<std::size_t>(rng::uniform01(g) * static_cast<double>(n));
    return std::min(idx, n - 1);
}

const char* cls_kind_name(losses::ClsKind kind) {
    return kind == losses::ClsKind::cross_entropy ? "cross_entropy" : "focal";
}

const char* reg_kind_name(losses::RegKind kind) {
    return kind == losses::RegKind::smooth_l1 ? "smooth_l1" : "l1_plus_giou";
}

losses::ClsKind cls_kind_from(const std::string& name) {
    if (name == "cross_entropy") return losses::ClsKind::cross_entropy;
    if (name == "focal") return losses::ClsKind::focal;
    throw ConfigError("unknown classification loss: " + name);
}

losses::RegKind reg_kind_from(const std::string& name) {
    if (name == "smooth_l1") return losses::RegKind::smooth_l1;
    if (name == "l1_plus_giou") return losses::RegKind::l1_plus_giou;
    throw ConfigError("unknown regression loss: " + name);
}

}  // namespace

ToyModel ToyModel::init(int feature_dim, int num_classes, int num_stages,
                        std::uint64_t seed) {
    if (feature_dim <= 0 || num_classes <= 0 || num_stages <= 0) {
        throw ValidationError("model dimensions must be positive");
    }
    ToyModel model;
    model.feature_dim = feature_dim;
    model.num_classes = num_classes;
    model.num_stages = num_stages;
    std::mt19937_64 g(seed);
    for (int k = 0; k < num_stages; ++k) {
        StageHead head;
        head.w_cls.resize(static_cast<std::size_t>(feature_dim) * (num_classes + 1));
        head.b_cls.assign(num_classes + 1, 0.0);
        head.w_reg.resize(static_cast<std::size_t>(feature_dim) * 4);
        head.b_reg.assign(4, 0.0);
        for (double& w : head.w_cls) w = 0.01 * rng::normal(g);
        for (double& w : head.w_reg) w = 0.01 * rng::normal(g);
        model.stages.push_back(std::move(head));
    }
    return model;
}

std::vector<double> ToyModel::logits(int stage, std::span<const double> features) const {
    check_stage(stage, num_stages);
    if (static_cast<int>(features.size()) != feature_dim) {
        throw ValidationError("feature vector arity mismatch");
    }
    const StageHead& head = stages[stage - 1];
    std::vector<double> z(head.b_cls);
    const std::size_t cols = z.size();
    for (std::size_t d = 0; d < features.size(); ++d) {
        const double f = features[d];
        const double* row = head.w_cls.data() + d * cols;
        for (std::size_t j = 0; j < cols; ++j) z[j] += f * row[j];
    }
    return z;
}

std::vector<double> ToyModel::probs(int stage, std::span<const double> features) const {
    std::vector<double> z = logits(stage, features);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

std::array<double, 4> ToyModel::reg_delta(int stage, std::span<const double> features) const {
    check_stage(stage, num_stages);
    if (static_cast<int>(features.size()) != feature_dim) {
        throw ValidationError("feature vector arity mismatch");
    }
    const StageHead& head = stages[stage - 1];
    std::array<double, 4> d{head.b_reg[0], head.b_reg[1], head.b_reg[2], head.b_reg[3]};
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double f = features[i];
        const double* row = head.w_reg.data() + i * 4;
        for (int j = 0; j < 4; ++j) d[j] += f * row[j];
    }
    return d;
}

BBox ToyModel::predict_box(int stage, std::span<const double> features,
                           const BBox& proposal) const {
    const std::array<double, 4> d = reg_delta(stage, features);
    return BBox{proposal.x_min + synthetic::kDeltaScale * d[0],
                proposal.y_min + synthetic::kDeltaScale * d[1],
                proposal.x_max + synthetic::kDeltaScale * d[2],
                proposal.y_max + synthetic::kDeltaScale * d[3]};
}

DetectionRecord ToyModel::predict_record(int stage, const synthetic::ToyProposal& prop) const {
    const std::vector<double>& features = prop.stage_features.at(stage - 1);
    DetectionRecord rec;
    rec.image_id = prop.image_id;
    rec.stage = stage;
    rec.proposal_id = prop.proposal_id;
    rec.class_probs = probs(stage, features);
    rec.box = predict_box(stage, features, prop.proposal_box);
    return rec;
}

nlohmann::json ToyModel::to_json() const {
    nlohmann::json doc;
    doc["feature_dim"] = feature_dim;
    doc["num_classes"] = num_classes;
    doc["num_stages"] = num_stages;
    doc["stages"] = nlohmann::json::array();
    for (const StageHead& head : stages) {
        doc["stages"].push_back({{"w_cls", head.w_cls},
                                 {"b_cls", head.b_cls},
                                 {"w_reg", head.w_reg},
                                 {"b_reg", head.b_reg}});
    }
    return doc;
}

ToyModel ToyModel::from_json(const nlohmann::json& doc) {
    ToyModel model;
    model.feature_dim = doc.at("feature_dim").get<int>();
    model.num_classes = doc.at("num_classes").get<int>();
    model.num_stages = doc.at("num_stages").get<int>();
    for (const nlohmann::json& s : doc.at("stages")) {
        StageHead head;
        head.w_cls = s.at("w_cls").get<std::vector<double>>();
        head.b_cls = s.at("b_cls").get<std::vector<double>>();
        head.w_reg = s.at("w_reg").get<std::vector<double>>();
        head.b_reg = s.at("b_reg").get<std::vector<double>>();
        model.stages.push_back(std::move(head));
    }
    if (static_cast<int>(model.stages.size()) != model.num_stages) {
        throw ValidationError("stage head count does not match num_stages");
    }
    return model;
}

const char* to_string(TeacherMode mode) {
    return mode == TeacherMode::ensemble ? "ensemble" : "self_per_head";
}

TeacherMode teacher_mode_from_string(const std::string& name) {
    if (name == "ensemble") return TeacherMode::ensemble;
    if (name == "self_per_head") return TeacherMode::self_per_head;
    throw ConfigError("unknown teacher mode: " + name);
}

void TrainConfig::validate(int num_stages) const {
    if (total_iters <= 0) throw ConfigError("total_iters must be positive");
    const int burn = resolved_burn_in();
    if (burn < 0 || burn > total_iters) {
        throw ConfigError("burn-in must lie within the training schedule");
    }
    if (batch_labeled <= 0 || batch_unlabeled <= 0) {
        throw ConfigError("batch sizes must be positive");
    }
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (lambda_u < 0.0) throw ConfigError("lambda_u must be non-negative");
    if (divergence_threshold <= 0.0) throw ConfigError("divergence_threshold must be positive");
    if (fixed_tau < 0.0 || fixed_tau > 1.0) throw ConfigError("fixed_tau must lie in [0,1]");
    if (teacher_mode == TeacherMode::ensemble) {
        if (apm_on) {
            apm.validate();
            if (apm.num_stages() != num_stages) {
                throw ConfigError("adaptive threshold config covers " +
                                  std::to_string(apm.num_stages()) + " stages, model has " +
                                  std::to_string(num_stages));
            }
        } else {
            if (static_cast<int>(fixed_stage_thresholds.size()) != num_stages) {
                throw ConfigError("fixed_stage_thresholds must cover every stage");
            }
            for (double t : fixed_stage_thresholds) {
                if (t < 0.0 || t > 1.0) throw ConfigError("stage thresholds must lie in [0,1]");
            }
        }
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"total_iters", total_iters},
            {"burn_in_iters", burn_in_iters},
            {"use_unlabeled", use_unlabeled},
            {"lambda_u", lambda_u},
            {"teacher_mode", to_string(teacher_mode)},
            {"apm_on", apm_on},
            {"fixed_stage_thresholds", fixed_stage_thresholds},
            {"fixed_tau", fixed_tau},
            {"self_epsilon", self_epsilon},
            {"batch_labeled", batch_labeled},
            {"batch_unlabeled", batch_unlabeled},
            {"learning_rate", learning_rate},
            {"cls_loss", cls_kind_name(cls_kind)},
            {"reg_loss", reg_kind_name(reg_kind)},
            {"apm", apm::to_json(apm)},
            {"seed", seed},
            {"divergence_threshold", divergence_threshold}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
    TrainConfig c;
    c.total_iters = doc.value("total_iters", c.total_iters);
    c.burn_in_iters = doc.value("burn_in_iters", c.burn_in_iters);
    c.use_unlabeled = doc.value("use_unlabeled", c.use_unlabeled);
    c.lambda_u = doc.value("lambda_u", c.lambda_u);
    c.teacher_mode = teacher_mode_from_string(doc.value("teacher_mode", std::string("ensemble")));
    c.apm_on = doc.value("apm_on", c.apm_on);
    c.fixed_stage_thresholds = doc.value("fixed_stage_thresholds", c.fixed_stage_thresholds);
    c.fixed_tau = doc.value("fixed_tau", c.fixed_tau);
    c.self_epsilon = doc.value("self_epsilon", c.self_epsilon);
    c.batch_labeled = doc.value("batch_labeled", c.batch_labeled);
    c.batch_unlabeled = doc.value("batch_unlabeled", c.batch_unlabeled);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.cls_kind = cls_kind_from(doc.value("cls_loss", std::string("cross_entropy")));
    c.reg_kind = reg_kind_from(doc.value("reg_loss", std::string("smooth_l1")));
    if (doc.contains("apm")) c.apm = apm::apm_config_from_json(doc.at("apm"));
    c.seed = doc.value("seed", c.seed);
    c.divergence_threshold = doc.value("divergence_threshold", c.divergence_threshold);
    return c;
}

std::string RunLog::losses_csv(int num_stages) const {
    std::string out = losses::LossBreakdown::csv_header();
    for (int k = 1; k <= num_stages; ++k) out += ",retained_" + std::to_string(k);
    out += ",pseudo_accuracy\n";
    for (const IterationRow& row : rows) {
        out += row.loss.csv_row(static_cast<std::size_t>(row.iteration));
        for (int k = 0; k < num_stages; ++k) {
            const std::size_t v = k < static_cast<int>(row.retained.size()) ? row.retained[k] : 0;
            out += "," + std::to_string(v);
        }
        out += "," + format_double(row.pseudo_accuracy) + "\n";
    }
    return out;
}

TrainResult train(const synthetic::ToyWorld& world, const TrainConfig& config,
                  const Observer& observer) {
    const int num_stages = world.num_stages;
    const int num_classes = static_cast<int>(world.index.size());
    const int feature_dim = world.feature_dim;
    config.validate(num_stages);
    if (world.labeled_proposals.empty()) {
        throw ValidationError("toy world has no labeled proposals");
    }

    TrainResult result;
    result.model = ToyModel::init(feature_dim, num_classes, num_stages,
                                  rng::stream_for(config.seed, "model_init"));
    ToyModel& model = result.model;

    // The active threshold store. Self mode collapses the stage schedule to
    // one epsilon and one fallback, since each head gates alone.
    apm::ApmConfig store_config = config.apm;
    if (config.teacher_mode == TeacherMode::self_per_head) {
        store_config.epsilons = {config.self_epsilon};
        store_config.fallback_thresholds = {config.fixed_tau};
    }
    apm::ClassStatsStore store(static_cast<std::size_t>(num_classes), store_config);

    std::mt19937_64 rng_labeled(rng::stream_for(config.seed, "labeled_batches"));
    std::mt19937_64 rng_unlabeled(rng::stream_for(config.seed, "unlabeled_batches"));

    const auto& labeled = world.labeled_proposals;
    const auto& unlabeled = world.unlabeled_proposals;
    const int burn_in = config.resolved_burn_in();
    const bool unlabeled_active =
        config.use_unlabeled && config.lambda_u != 0.0 && !unlabeled.empty();

    std::string th_csv = "iteration,class_index";
    for (int k = 1; k <= store_config.num_stages(); ++k) th_csv += ",tau_" + std::to_string(k);
    th_csv += "\n";

    const int bg_slot = num_classes;
    std::vector<HeadGrads> grads_labeled, grads_unlabeled;
    for (int k = 0; k < num_stages; ++k) {
        grads_labeled.emplace_back(feature_dim, num_classes);
        grads_unlabeled.emplace_back(feature_dim, num_classes);
    }

    for (int t = 0; t < config.total_iters; ++t) {
        for (int k = 0; k < num_stages; ++k) {
            grads_labeled[k] = HeadGrads(feature_dim, num_classes);
            grads_unlabeled[k] = HeadGrads(feature_dim, num_classes);
        }
        losses::LossAccumulator acc;
        // Teacher confidences gathered from this iteration's labeled forward
        // pass; they reach the store only after the parameter step.
        std::vector<std::pair<int, double>> store_feed;

        for (int b = 0; b < config.batch_labeled; ++b) {
            const synthetic::ToyProposal& prop = labeled[draw_index(rng_labeled, labeled.size())];
            const int target = prop.true_class >= 0 ? prop.true_class : bg_slot;
            double cls_sum = 0.0;
            double reg_sum = 0.0;
            double gt_prob_sum = 0.0;
            for (int k = 1; k <= num_stages; ++k) {
                const std::vector<double>& features = prop.stage_features[k - 1];
                const std::vector<double> p = model.probs(k, features);
                cls_sum += losses::cls_loss(p, target, config.cls_kind).value;
                grads_labeled[k - 1].add_cls(features,
                                             losses::cls_grad_logits(p, target, config.cls_kind));
                if (prop.true_class >= 0) {
                    const std::array<double, 4> delta = model.reg_delta(k, features);
                    const RegTerm rt =
                        reg_term(config.reg_kind, prop.proposal_box, delta, prop.gt_box);
                    reg_sum += rt.loss;
                    grads_labeled[k - 1].add_reg(features, rt.grad);
                    if (config.teacher_mode == TeacherMode::self_per_head) {
                        store_feed.emplace_back(prop.true_class, p[prop.true_class]);
                    } else {
                        gt_prob_sum += p[prop.true_class];
                    }
                }
            }
            if (prop.true_class >= 0 && config.teacher_mode == TeacherMode::ensemble) {
                store_feed.emplace_back(prop.true_class, gt_prob_sum / num_stages);
            }
            acc.add_labeled(cls_sum, reg_sum);
        }

        cpl::PseudoLabelSet pseudo;
        bool have_pseudo = false;
        std::vector<std::size_t> retained(num_stages, 0);
        double pseudo_correct = 0.0;
        double pseudo_total = 0.0;
        const bool unlabeled_now = unlabeled_active && t >= burn_in;

        if (unlabeled_now && config.teacher_mode == TeacherMode::ensemble) {
            // Sampling with replacement can repeat a proposal, so chains are
            // ensembled per batch slot rather than keyed by proposal id.
            std::vector<const synthetic::ToyProposal*> batch(config.batch_unlabeled);
            std::vector<cpl::TeacherTarget> targets;
            std::vector<std::vector<std::vector<double>>> slot_probs(batch.size());
            std::vector<std::vector<std::array<double, 4>>> slot_deltas(batch.size());
            targets.reserve(batch.size());
            for (std::size_t s = 0; s < batch.size(); ++s) {
                batch[s] = &unlabeled[draw_index(rng_unlabeled, unlabeled.size())];
                const synthetic::ToyProposal& prop = *batch[s];
                std::vector<DetectionRecord> chain;
                chain.reserve(num_stages);
                for (int k = 1; k <= num_stages; ++k) {
                    chain.push_back(model.predict_record(k, prop));
                    slot_probs[s].push_back(chain.back().class_probs);
                    slot_deltas[s].push_back(model.reg_delta(k, prop.stage_features[k - 1]));
                }
                targets.push_back(cpl::ensemble(chain));
            }
            pseudo = config.apm_on
                         ? cpl::gate(std::move(targets), store)
                         : cpl::gate_fixed(std::move(targets), config.fixed_stage_thresholds);
            have_pseudo = true;
            retained = pseudo.retained_counts();

            for (std::size_t s = 0; s < batch.size(); ++s) {
                const cpl::PseudoLabel& label = pseudo.labels[s];
                if (!label.retained_anywhere()) continue;
                const synthetic::ToyProposal& prop = *batch[s];
                const int y_hat = label.target.y_hat;
                double cls_sum = 0.0;
                double reg_sum = 0.0;
                for (int k = 1; k <= num_stages; ++k) {
                    if (!label.stage_pass[k - 1]) continue;
                    const std::vector<double>& features = prop.stage_features[k - 1];
                    const std::vector<double>& p = slot_probs[s][k - 1];
                    cls_sum += losses::cls_loss(p, y_hat, config.cls_kind).value;
                    grads_unlabeled[k - 1].add_cls(
                        features, losses::cls_grad_logits(p, y_hat, config.cls_kind));
                    const RegTerm rt = reg_term(config.reg_kind, prop.proposal_box,
                                                slot_deltas[s][k - 1], label.target.b_t);
                    reg_sum += rt.loss;
                    grads_unlabeled[k - 1].add_reg(features, rt.grad);
                    pseudo_total += 1.0;
                    if (y_hat == prop.true_class) pseudo_correct += 1.0;
                }
                acc.add_unlabeled(cls_sum, reg_sum);
            }
        } else if (unlabeled_now) {
            // Per-head self-teaching: each stage gates its own argmax at one
            // threshold. The regression target is the head's own box, an
            // exactly-zero term, so only the classification side moves.
            for (int b = 0; b < config.batch_unlabeled; ++b) {
                const synthetic::ToyProposal& prop =
                    unlabeled[draw_index(rng_unlabeled, unlabeled.size())];
                double cls_sum = 0.0;
                bool any = false;
                for (int k = 1; k <= num_stages; ++k) {
                    const std::vector<double>& features = prop.stage_features[k - 1];
                    const std::vector<double> p = model.probs(k, features);
                    const int y_k = argmax_foreground(p);
                    const double q_k = p[y_k];
                    if (p.back() > q_k) continue;  // background argmax
                    const double tau =
                        config.apm_on ? store.threshold(y_k, 1) : config.fixed_tau;
                    if (q_k < tau) continue;
                    any = true;
                    retained[k - 1] += 1;
                    cls_sum += losses::cls_loss(p, y_k, config.cls_kind).value;
                    grads_unlabeled[k - 1].add_cls(
                        features, losses::cls_grad_logits(p, y_k, config.cls_kind));
                    pseudo_total += 1.0;
                    if (y_k == prop.true_class) pseudo_correct += 1.0;
                }
                if (any) acc.add_unlabeled(cls_sum, 0.0);
            }
        }

        const losses::LossBreakdown breakdown = acc.finalize(config.lambda_u);

        IterationRow row;
        row.iteration = t;
        row.loss = breakdown;
        if (unlabeled_now) row.retained = retained;
        row.pseudo_accuracy = pseudo_total > 0.0 ? pseudo_correct / pseudo_total : -1.0;
        result.log.rows.push_back(row);

        if (!std::isfinite(breakdown.total) || breakdown.total > config.divergence_threshold) {
            result.diverged = true;
            std::ostringstream msg;
            msg << "loss diverged at iteration " << t << " (total " << breakdown.total << ")";
            result.diagnostic = msg.str();
            break;
        }

        const double scale_l =
            config.learning_rate / static_cast<double>(std::max<std::size_t>(acc.labeled_count(), 1));
        const double scale_u =
            config.learning_rate * config.lambda_u /
            static_cast<double>(std::max<std::size_t>(acc.unlabeled_count(), 1));
        for (int k = 0; k < num_stages; ++k) {
            apply_step(model.stages[k], grads_labeled[k], grads_unlabeled[k], scale_l, scale_u);
        }

        for (const auto& [cls, value] : store_feed) {
            store.record_confidence(cls, std::clamp(value, 0.0, 1.0));
        }

        for (int c = 0; c < num_classes; ++c) {
            th_csv += std::to_string(t) + "," + std::to_string(c);
            for (int k = 1; k <= store_config.num_stages(); ++k) {
                th_csv += "," + format_double(store.threshold(c, k));
            }
            th_csv += "\n";
        }

        if (observer) {
            observer(IterationState{t, model, store, have_pseudo ? &pseudo : nullptr, breakdown});
        }
    }

    result.log.thresholds_csv = std::move(th_csv);
    result.store = std::move(store);
    return result;
}

nlohmann::json EvalSummary::to_json() const {
    return {{"overall_accuracy", overall_accuracy},
            {"group_accuracy", group_accuracy},
            {"group_counts", group_counts}};
}

EvalSummary evaluate_toy(const ToyModel& model, const synthetic::ToyWorld& world,
                         std::span<const synthetic::ToyProposal> proposals) {
    EvalSummary summary;
    if (proposals.empty()) return summary;
    const int bg_slot = model.num_classes;
    std::map<std::string, double> group_correct;
    std::size_t correct = 0;
    for (const synthetic::ToyProposal& prop : proposals) {
        std::vector<double> mean(model.num_classes + 1, 0.0);
        for (int k = 1; k <= model.num_stages; ++k) {
            const std::vector<double> p = model.probs(k, prop.stage_features[k - 1]);
            for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += p[j];
        }
        int best = 0;
        for (std::size_t j = 1; j < mean.size(); ++j) {
            if (mean[j] > mean[best]) best = static_cast<int>(j);
        }
        const int target = prop.true_class >= 0 ? prop.true_class : bg_slot;
        const bool hit = best == target;
        if (hit) ++correct;
        if (prop.true_class >= 0) {
            const std::string key = to_string(world.class_groups.at(prop.true_class));
            summary.group_counts[key] += 1;
            group_correct[key] += hit ? 1.0 : 0.0;
        }
    }
    summary.overall_accuracy = static_cast<double>(correct) / static_cast<double>(proposals.size());
    for (const auto& [key, num] : group_correct) {
        summary.group_accuracy[key] = num / static_cast<double>(summary.group_counts[key]);
    }
    return summary;
}

nlohmann::json AblationTable::to_json() const {
    nlohmann::json doc;
    doc["rows"] = nlohmann::json::array();
    for (const AblationRow& row : rows) {
        doc["rows"].push_back({{"name", row.name},
                               {"cpl", row.cpl},
                               {"apm", row.apm},
                               {"overall", row.overall},
                               {"group_accuracy", row.group_accuracy}});
    }
    doc["with_burn_in"] = with_burn_in;
    doc["without_burn_in"] = without_burn_in;
    doc["seeds"] = seeds;
    return doc;
}

std::string AblationTable::to_markdown() const {
    auto cell = [](const std::map<std::string, double>& groups, const char* key) {
        const auto it = groups.find(key);
        return it == groups.end() ? std::string("-") : format_double(it->second);
    };
    std::string out = "| config | CPL | APM | overall | rare | common | frequent |\n";
    out += "| --- | --- | --- | --- | --- | --- | --- |\n";
    for (const AblationRow& row : rows) {
        out += "| " + row.name + " | " + (row.cpl ? "yes" : "no") + " | " +
               (row.apm ? "yes" : "no") + " | " + format_double(row.overall) + " | " +
               cell(row.group_accuracy, "rare") + " | " + cell(row.group_accuracy, "common") +
               " | " + cell(row.group_accuracy, "frequent") + " |\n";
    }
    out += "\nheld-out accuracy with burn-in: " + format_double(with_burn_in) +
           ", without: " + format_double(without_burn_in) + "\n";
    return out;
}

AblationTable ablation_suite(const synthetic::SyntheticConfig& world_config,
                             const TrainConfig& base,
                             std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw ValidationError("ablation needs at least one seed");

    struct Variant {
        const char* name;
        bool cpl;
        bool apm;
    };
    constexpr std::array<Variant, 4> kVariants{{{"baseline", false, false},
                                                {"+CPL", true, false},
                                                {"+APM", false, true},
                                                {"CPL+APM", true, true}}};

    AblationTable table;
    table.seeds.assign(seeds.begin(), seeds.end());

    std::array<double, 4> overall_sum{};
    std::array<std::map<std::string, std::pair<double, int>>, 4> group_sums;
    double burn_sum = 0.0;
    double no_burn_sum = 0.0;

    for (const std::uint64_t seed : seeds) {
        synthetic::SyntheticConfig wc = world_config;
        wc.seed = seed;
        const synthetic::ToyWorld world = synthetic::generate_toy_world(wc);

        auto run = [&](const TrainConfig& cfg) {
            const TrainResult res = train(world, cfg);
            return evaluate_toy(res.model, world, world.heldout_proposals);
        };

        for (std::size_t v = 0; v < kVariants.size(); ++v) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            if (!kVariants[v].cpl && !kVariants[v].apm) {
                cfg.use_unlabeled = false;
            } else {
                cfg.use_unlabeled = true;
                cfg.teacher_mode =
                    kVariants[v].cpl ? TeacherMode::ensemble : TeacherMode::self_per_head;
                cfg.apm_on = kVariants[v].apm;
            }
            const EvalSummary summary = run(cfg);
            overall_sum[v] += summary.overall_accuracy;
            for (const auto& [key, acc] : summary.group_accuracy) {
                auto& slot = group_sums[v][key];
                slot.first += acc;
                slot.second += 1;
            }
            if (kVariants[v].cpl && kVariants[v].apm) {
                burn_sum += summary.overall_accuracy;
                TrainConfig no_burn = cfg;
                no_burn.burn_in_iters = 0;
                no_burn_sum += run(no_burn).overall_accuracy;
            }
        }
    }

    const double n = static_cast<double>(seeds.size());
    for (std::size_t v = 0; v < kVariants.size(); ++v) {
        AblationRow row;
        row.name = kVariants[v].name;
        row.cpl = kVariants[v].cpl;
        row.apm = kVariants[v].apm;
        row.overall = overall_sum[v] / n;
        for (const auto& [key, slot] : group_sums[v]) {
            row.group_accuracy[key] = slot.first / slot.second;
        }
        table.rows.push_back(std::move(row));
    }
    table.with_burn_in = burn_sum / n;
    table.without_burn_in = no_burn_sum / n;
    return table;
}

}  // namespace cascademine::toy
