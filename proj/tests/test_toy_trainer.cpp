#include "cascademine/toy_trainer.hpp"

#include <cmath>
#include <numeric>

#include "doctest.h"

using namespace cascademine;
using namespace cascademine::toy;

namespace {

synthetic::SyntheticConfig tiny_world_config() {
    synthetic::SyntheticConfig c;
    c.num_classes = 6;
    c.num_images = 20;
    c.objects_per_image = 4.0;
    c.heldout_images = 8;
    c.seed = 4;
    return c;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.total_iters = 40;
    c.batch_labeled = 16;
    c.batch_unlabeled = 16;
    c.seed = 4;
    return c;
}

}  // namespace

TEST_CASE("model initialization shape and determinism") {
    const ToyModel a = ToyModel::init(16, 6, 3, 42);
    CHECK(a.stages.size() == 3);
    CHECK(a.stages[0].w_cls.size() == 16u * 7u);
    CHECK(a.stages[0].b_cls.size() == 7);
    CHECK(a.stages[0].w_reg.size() == 16u * 4u);
    const ToyModel b = ToyModel::init(16, 6, 3, 42);
    CHECK(a.stages[2].w_cls == b.stages[2].w_cls);
    const ToyModel c = ToyModel::init(16, 6, 3, 43);
    CHECK(a.stages[0].w_cls != c.stages[0].w_cls);
    // biases start at zero so early probabilities are near uniform
    CHECK(a.stages[0].b_cls == std::vector<double>(7, 0.0));
}

TEST_CASE("probabilities are a valid softmax and respond to features") {
    const ToyModel m = ToyModel::init(8, 4, 2, 1);
    const std::vector<double> f(8, 0.5);
    const std::vector<double> p = m.probs(1, f);
    REQUIRE(p.size() == 5);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (const double v : p) CHECK(v > 0.0);
    CHECK_THROWS_AS(m.probs(3, f), ValidationError);
    CHECK_THROWS_AS(m.probs(1, std::vector<double>(7, 0.0)), ValidationError);
}

TEST_CASE("model serialization round trips") {
    const ToyModel m = ToyModel::init(8, 4, 2, 9);
    const ToyModel back = ToyModel::from_json(m.to_json());
    CHECK(back.feature_dim == m.feature_dim);
    CHECK(back.stages[1].w_cls == m.stages[1].w_cls);
    CHECK(back.stages[1].b_reg == m.stages[1].b_reg);
}

TEST_CASE("teacher mode strings") {
    CHECK(teacher_mode_from_string("ensemble") == TeacherMode::ensemble);
    CHECK(teacher_mode_from_string("self_per_head") == TeacherMode::self_per_head);
    CHECK_THROWS_AS(teacher_mode_from_string("nope"), ConfigError);
    CHECK(std::string(to_string(TeacherMode::ensemble)) == "ensemble");
}

TEST_CASE("train config validation and serialization") {
    TrainConfig c = quick_config();
    CHECK_NOTHROW(c.validate(3));
    CHECK(c.resolved_burn_in() == 8);  // 20% of 40
    c.burn_in_iters = 5;
    CHECK(c.resolved_burn_in() == 5);
    const TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());

    SUBCASE("fixed thresholds must cover the stages when adaptive is off") {
        c.apm_on = false;
        c.fixed_stage_thresholds = {0.5};
        CHECK_THROWS_AS(c.validate(3), ConfigError);
    }
    SUBCASE("adaptive config must match the stage count") {
        c.apm_on = true;
        c.apm.epsilons = {1.0, 2.0};
        c.apm.fallback_thresholds = {0.5, 0.6};
        CHECK_THROWS_AS(c.validate(3), ConfigError);
    }
    SUBCASE("burn-in cannot exceed the schedule") {
        c.burn_in_iters = 100;
        CHECK_THROWS_AS(c.validate(3), ConfigError);
    }
}

TEST_CASE("supervised training reduces the labeled loss") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    c.total_iters = 60;
    c.use_unlabeled = false;
    const TrainResult result = train(world, c);
    CHECK_FALSE(result.diverged);
    REQUIRE(result.log.rows.size() == 60);
    const auto window_mean = [&](std::size_t begin, std::size_t end) {
        double sum = 0.0;
        for (std::size_t i = begin; i < end; ++i) sum += result.log.rows[i].loss.total;
        return sum / static_cast<double>(end - begin);
    };
    CHECK(window_mean(50, 60) < window_mean(0, 10));
    // supervised rows never report pseudo-label state
    for (const IterationRow& row : result.log.rows) {
        CHECK(row.retained.empty());
        CHECK(row.pseudo_accuracy == -1.0);
    }
}

TEST_CASE("lambda zero leaves the labeled path bit-identical to supervised") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig supervised = quick_config();
    supervised.use_unlabeled = false;
    TrainConfig zero = quick_config();
    zero.use_unlabeled = true;
    zero.lambda_u = 0.0;
    const TrainResult a = train(world, supervised);
    const TrainResult b = train(world, zero);
    for (int k = 0; k < 3; ++k) {
        CHECK(a.model.stages[k].w_cls == b.model.stages[k].w_cls);
        CHECK(a.model.stages[k].b_cls == b.model.stages[k].b_cls);
        CHECK(a.model.stages[k].w_reg == b.model.stages[k].w_reg);
        CHECK(a.model.stages[k].b_reg == b.model.stages[k].b_reg);
    }
}

TEST_CASE("unlabeled batches only flow after burn-in") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    c.burn_in_iters = 10;
    const TrainResult result = train(world, c);
    for (const IterationRow& row : result.log.rows) {
        if (row.iteration < 10) {
            CHECK(row.retained.empty());
            CHECK(row.loss.cls_unlabeled == 0.0);
        } else {
            CHECK(row.retained.size() == 3);
        }
    }
}

TEST_CASE("observer sees every iteration and the pseudo set in ensemble mode") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    c.burn_in_iters = 4;
    int calls = 0;
    int with_pseudo = 0;
    const TrainResult result = train(world, c, [&](const IterationState& state) {
        CHECK(state.iteration == calls);
        ++calls;
        if (state.pseudo != nullptr) ++with_pseudo;
    });
    CHECK_FALSE(result.diverged);
    CHECK(calls == c.total_iters);
    CHECK(with_pseudo == c.total_iters - 4);

    SUBCASE("self mode never exposes a gated set") {
        TrainConfig self = c;
        self.teacher_mode = TeacherMode::self_per_head;
        int self_pseudo = 0;
        train(world, self, [&](const IterationState& state) {
            if (state.pseudo != nullptr) ++self_pseudo;
        });
        CHECK(self_pseudo == 0);
    }
}

TEST_CASE("adaptive thresholds evolve during training") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    const TrainResult result = train(world, c);
    // by the end, at least some classes left the fallback regime
    bool any_adaptive = false;
    for (std::size_t cls = 0; cls < world.index.size(); ++cls) {
        if (result.store.stats(static_cast<int>(cls)).count >= c.apm.min_samples) {
            any_adaptive = true;
        }
    }
    CHECK(any_adaptive);
    // thresholds csv has one row per (iteration, class)
    const std::string& csv = result.log.thresholds_csv;
    const std::size_t rows = std::count(csv.begin(), csv.end(), '\n');
    CHECK(rows == 1 + c.total_iters * world.index.size());
    CHECK(csv.rfind("iteration,class_index,tau_1,tau_2,tau_3", 0) == 0);
}

TEST_CASE("divergence is flagged instead of thrown") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    c.learning_rate = 1e5;  // guaranteed blow-up
    c.total_iters = 50;
    const TrainResult result = train(world, c);
    CHECK(result.diverged);
    CHECK_FALSE(result.diagnostic.empty());
    CHECK(result.log.rows.size() < 50);
}

TEST_CASE("losses csv carries retained counts and accuracy columns") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    c.total_iters = 12;
    c.burn_in_iters = 6;
    const TrainResult result = train(world, c);
    const std::string csv = result.log.losses_csv(3);
    CHECK(csv.rfind("iteration,cls_labeled,reg_labeled,cls_unlabeled,reg_unlabeled,total,"
                    "retained_1,retained_2,retained_3,pseudo_accuracy",
                    0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
}

TEST_CASE("held-out evaluation reports groups") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    c.use_unlabeled = false;
    const TrainResult result = train(world, c);
    const EvalSummary summary = evaluate_toy(result.model, world, world.heldout_proposals);
    CHECK(summary.overall_accuracy >= 0.0);
    CHECK(summary.overall_accuracy <= 1.0);
    CHECK_FALSE(summary.group_counts.empty());
    std::size_t total = 0;
    for (const auto& [key, n] : summary.group_counts) total += n;
    std::size_t fg = 0;
    for (const auto& p : world.heldout_proposals) {
        if (p.true_class >= 0) ++fg;
    }
    CHECK(total == fg);
    CHECK_FALSE(summary.to_json().empty());
}

TEST_CASE("training beats the untrained model on held-out proposals") {
    const synthetic::ToyWorld world = synthetic::generate_toy_world(tiny_world_config());
    TrainConfig c = quick_config();
    c.total_iters = 80;
    c.use_unlabeled = false;
    const TrainResult result = train(world, c);
    const ToyModel fresh = ToyModel::init(world.feature_dim,
                                          static_cast<int>(world.index.size()),
                                          world.num_stages, 123);
    const double trained = evaluate_toy(result.model, world, world.heldout_proposals)
                               .overall_accuracy;
    const double untrained = evaluate_toy(fresh, world, world.heldout_proposals)
                                 .overall_accuracy;
    CHECK(trained > untrained + 0.1);
}
