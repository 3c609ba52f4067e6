#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cascademine/apm.hpp"
#include "cascademine/coco_io.hpp"
#include "cascademine/cpl.hpp"
#include "cascademine/eval.hpp"
#include "cascademine/geometry.hpp"
#include "cascademine/rng.hpp"
#include "cascademine/synthetic.hpp"
#include "cascademine/types.hpp"

using namespace cascademine;

namespace {

BBox random_box(std::mt19937_64& g, double extent) {
    std::uniform_real_distribution<double> pos(0.0, extent);
    std::uniform_real_distribution<double> len(4.0, extent / 4.0);
    const double x = pos(g), y = pos(g);
    return {x, y, x + len(g), y + len(g)};
}

// Clustered boxes so nms and matching do real suppression work instead of
// sailing through disjoint inputs.
std::vector<ScoredBox> clustered_boxes(std::size_t n, int num_classes,
                                                 std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    std::normal_distribution<double> jitter(0.0, 6.0);
    std::vector<ScoredBox> out;
    out.reserve(n);
    const std::size_t clusters = std::max<std::size_t>(n / 8, 1);
    std::vector<BBox> anchors;
    anchors.reserve(clusters);
    for (std::size_t i = 0; i < clusters; ++i) anchors.push_back(random_box(g, 640.0));
    for (std::size_t i = 0; i < n; ++i) {
        BBox b = anchors[i % clusters];
        b.x_min += jitter(g);
        b.y_min += jitter(g);
        b.x_max += jitter(g);
        b.y_max += jitter(g);
        if (b.x_max <= b.x_min) b.x_max = b.x_min + 1.0;
        if (b.y_max <= b.y_min) b.y_max = b.y_min + 1.0;
        out.push_back({b, unit(g), cls(g)});
    }
    return out;
}

std::vector<cpl::TeacherTarget> teacher_targets(std::size_t proposals, int num_classes,
                                                int num_stages, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    std::vector<DetectionRecord> records;
    records.reserve(proposals * static_cast<std::size_t>(num_stages));
    for (std::size_t p = 0; p < proposals; ++p) {
        const BBox box = random_box(g, 640.0);
        const int hot = cls(g);
        for (int k = 1; k <= num_stages; ++k) {
            DetectionRecord rec;
            rec.image_id = static_cast<std::int64_t>(p / 16);
            rec.stage = k;
            rec.proposal_id = static_cast<std::int64_t>(p);
            rec.box = box;
            rec.class_probs.assign(static_cast<std::size_t>(num_classes) + 1, 0.0);
            for (double& v : rec.class_probs) v = 0.02 + 0.2 * unit(g);
            rec.class_probs[hot] += 2.0 * unit(g);
            double mass = 0.0;
            for (double v : rec.class_probs) mass += v;
            for (double& v : rec.class_probs) v /= mass;
            records.push_back(std::move(rec));
        }
    }
    return cpl::ensemble_batch(records, num_stages);
}

void BM_iou(benchmark::State& state) {
    std::mt19937_64 g(11);
    std::vector<std::pair<BBox, BBox>> pairs(1024);
    for (auto& [a, b] : pairs) {
        a = random_box(g, 640.0);
        b = random_box(g, 640.0);
    }
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& [a, b] = pairs[i++ & 1023];
        benchmark::DoNotOptimize(iou(a, b));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}

void BM_giou(benchmark::State& state) {
    std::mt19937_64 g(12);
    std::vector<std::pair<BBox, BBox>> pairs(1024);
    for (auto& [a, b] : pairs) {
        a = random_box(g, 640.0);
        b = random_box(g, 640.0);
    }
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& [a, b] = pairs[i++ & 1023];
        benchmark::DoNotOptimize(giou(a, b));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}

void BM_nms(benchmark::State& state) {
    const auto boxes = clustered_boxes(static_cast<std::size_t>(state.range(0)), 8, 21);
    for (auto _ : state) {
        auto kept = nms_indices(boxes, 0.5);
        benchmark::DoNotOptimize(kept);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

void BM_greedy_match(benchmark::State& state) {
    const auto dets = clustered_boxes(static_cast<std::size_t>(state.range(0)), 8, 31);
    const auto ann_boxes = clustered_boxes(static_cast<std::size_t>(state.range(0)) / 4, 8, 32);
    std::vector<BBox> anns;
    anns.reserve(ann_boxes.size());
    for (const auto& sb : ann_boxes) anns.push_back(sb.box);
    for (auto _ : state) {
        auto match = greedy_match(dets, anns, 0.5);
        benchmark::DoNotOptimize(match);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

void BM_apm_store_feed(benchmark::State& state) {
    const int num_classes = 30;
    std::mt19937_64 g(41);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    const std::size_t feed = static_cast<std::size_t>(state.range(0));
    std::vector<std::pair<int, double>> samples(feed);
    for (auto& [c, v] : samples) {
        c = cls(g);
        v = unit(g);
    }
    for (auto _ : state) {
        apm::ClassStatsStore store(num_classes, apm::ApmConfig{});
        for (const auto& [c, v] : samples) store.record_confidence(c, v);
        auto table = store.threshold_table();
        benchmark::DoNotOptimize(table);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

void BM_ensemble_gate(benchmark::State& state) {
    const int num_classes = 30;
    auto targets = teacher_targets(static_cast<std::size_t>(state.range(0)), num_classes, 3, 51);
    apm::ClassStatsStore store(num_classes, apm::ApmConfig{});
    std::mt19937_64 g(52);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    for (int i = 0; i < 2000; ++i) store.record_confidence(cls(g), unit(g));
    for (auto _ : state) {
        auto copy = targets;
        auto set = cpl::gate(std::move(copy), store);
        benchmark::DoNotOptimize(set);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

void BM_fixed_ap(benchmark::State& state) {
    synthetic::SyntheticConfig config;
    config.num_images = static_cast<int>(state.range(0));
    config.seed = 61;
    const synthetic::GeneratedDataset data = synthetic::generate_dataset(config);
    const CategoryIndex index(data.labeled.categories);
    const auto records = synthetic::simulate_detector(data, Split::labeled, config, 0.5);
    std::vector<ResultRecord> results;
    results.reserve(records.size());
    for (const auto& rec : records) {
        if (rec.stage != config.num_stages) continue;  // last stage only
        results.push_back(to_result(rec, index));
    }
    for (auto _ : state) {
        auto report = eval::fixed_ap(results, data.labeled);
        benchmark::DoNotOptimize(report);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(results.size()));
}

}  // namespace

BENCHMARK(BM_iou);
BENCHMARK(BM_giou);
BENCHMARK(BM_nms)->Arg(128)->Arg(512)->Arg(2048);
BENCHMARK(BM_greedy_match)->Arg(128)->Arg(512);
BENCHMARK(BM_apm_store_feed)->Arg(1024)->Arg(8192);
BENCHMARK(BM_ensemble_gate)->Arg(256)->Arg(1024);
BENCHMARK(BM_fixed_ap)->Arg(40)->Arg(160);

BENCHMARK_MAIN();
