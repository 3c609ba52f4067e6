#include "cascademine/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"

using namespace cascademine;

namespace {

// Boxes on a coarse grid so overlap ties and score ties actually happen.
BBox random_box(std::mt19937_64& g, double extent = 100.0) {
    std::uniform_real_distribution<double> u(0.0, extent);
    double x0 = std::round(u(g) * 4.0) / 4.0;
    double y0 = std::round(u(g) * 4.0) / 4.0;
    double x1 = std::round(u(g) * 4.0) / 4.0;
    double y1 = std::round(u(g) * 4.0) / 4.0;
    if (x1 < x0) std::swap(x0, x1);
    if (y1 < y0) std::swap(y0, y1);
    return BBox{x0, y0, x1, y1};
}

}  // namespace

TEST_CASE("iou matches the long-double reference") {
    std::mt19937_64 g(11);
    for (int i = 0; i < 2000; ++i) {
        const BBox a = random_box(g);
        const BBox b = random_box(g);
        const double got = iou(a, b);
        const double want = static_cast<double>(oracle::ref_iou(a, b));
        CHECK(std::abs(got - want) <= 1e-12);
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
        CHECK(iou(b, a) == got);
    }
}

TEST_CASE("iou edge cases") {
    const BBox unit{0, 0, 1, 1};
    CHECK(iou(unit, unit) == 1.0);
    CHECK(iou(unit, BBox{2, 2, 3, 3}) == 0.0);
    // shared edge only: intersection has zero area
    CHECK(iou(unit, BBox{1, 0, 2, 1}) == 0.0);
    // degenerate boxes never match, not even themselves
    const BBox line{0, 0, 0, 1};
    CHECK(iou(line, line) == 0.0);
    CHECK(iou(line, unit) == 0.0);
    // half overlap
    CHECK(iou(unit, BBox{0.5, 0, 1.5, 1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("giou matches the long-double reference and its bounds") {
    std::mt19937_64 g(12);
    for (int i = 0; i < 2000; ++i) {
        const BBox a = random_box(g);
        const BBox b = random_box(g);
        const double got = giou(a, b);
        CHECK(std::abs(got - static_cast<double>(oracle::ref_giou(a, b))) <= 1e-12);
        CHECK(got >= -1.0);
        CHECK(got <= 1.0);
        CHECK(got <= iou(a, b) + 1e-15);
    }
    const BBox unit{0, 0, 1, 1};
    CHECK(giou(unit, unit) == 1.0);
    // far apart boxes: iou 0, hull penalty pushes below zero
    CHECK(giou(unit, BBox{10, 10, 11, 11}) < 0.0);
}

TEST_CASE("giou gradient agrees with finite differences") {
    std::mt19937_64 g(13);
    int checked = 0;
    for (int i = 0; i < 500 && checked < 200; ++i) {
        const BBox a = random_box(g);
        const BBox b = random_box(g);
        if (a.area() < 1.0 || b.area() < 1.0) continue;
        // skip configurations near a piecewise boundary, where one-sided
        // derivatives differ
        const double kGuard = 1e-3;
        bool near_kink = std::abs(a.x_min - b.x_min) < kGuard ||
                         std::abs(a.x_max - b.x_max) < kGuard ||
                         std::abs(a.y_min - b.y_min) < kGuard ||
                         std::abs(a.y_max - b.y_max) < kGuard ||
                         std::abs(a.x_min - b.x_max) < kGuard ||
                         std::abs(a.x_max - b.x_min) < kGuard ||
                         std::abs(a.y_min - b.y_max) < kGuard ||
                         std::abs(a.y_max - b.y_min) < kGuard;
        if (near_kink) continue;
        ++checked;
        const std::array<double, 4> grad = giou_grad_first(a, b);
        const auto component = [&](int c) {
            return oracle::finite_diff(
                [&](double v) {
                    BBox m = a;
                    (c == 0 ? m.x_min : c == 1 ? m.y_min : c == 2 ? m.x_max : m.y_max) = v;
                    return giou(m, b);
                },
                c == 0 ? a.x_min : c == 1 ? a.y_min : c == 2 ? a.x_max : a.y_max);
        };
        for (int c = 0; c < 4; ++c) {
            CHECK(std::abs(grad[c] - component(c)) <= 1e-5);
        }
    }
    CHECK(checked >= 100);
}

TEST_CASE("nms matches the quadratic reference") {
    std::mt19937_64 g(14);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, 2);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<ScoredBox> records;
        const int n = 1 + static_cast<int>(g() % 40);
        for (int i = 0; i < n; ++i) {
            // scores on a grid so ties occur
            records.push_back(
                {random_box(g, 30.0), std::round(score(g) * 10.0) / 10.0, label(g)});
        }
        for (const double thr : {0.3, 0.5, 0.7}) {
            CHECK(nms_indices(records, thr) == oracle::ref_nms(records, thr));
        }
    }
}

TEST_CASE("nms keeps survivors in input order and is idempotent") {
    std::mt19937_64 g(15);
    std::vector<ScoredBox> records;
    for (int i = 0; i < 60; ++i) {
        records.push_back({random_box(g, 20.0), static_cast<double>(g() % 100) / 100.0, 0});
    }
    const std::vector<std::size_t> kept = nms_indices(records, 0.5);
    for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i - 1] < kept[i]);
    std::vector<ScoredBox> survivors;
    for (const std::size_t i : kept) survivors.push_back(records[i]);
    const std::vector<std::size_t> again = nms_indices(survivors, 0.5);
    CHECK(again.size() == survivors.size());
}

TEST_CASE("nms suppresses only strictly above the threshold") {
    // two identical boxes: iou exactly 1.0 > thr for thr < 1
    std::vector<ScoredBox> same = {{{0, 0, 10, 10}, 0.9, 0}, {{0, 0, 10, 10}, 0.8, 0}};
    CHECK(nms_indices(same, 0.5).size() == 1);
    // iou exactly at the threshold survives
    // boxes [0,10]x[0,10] and [0,5]x[0,10]: iou = 50/100 = 0.5
    std::vector<ScoredBox> at = {{{0, 0, 10, 10}, 0.9, 0}, {{0, 0, 5, 10}, 0.8, 0}};
    CHECK(nms_indices(at, 0.5).size() == 2);
    // different labels never suppress each other
    std::vector<ScoredBox> cross = {{{0, 0, 10, 10}, 0.9, 0}, {{0, 0, 10, 10}, 0.8, 1}};
    CHECK(nms_indices(cross, 0.5).size() == 2);
}

TEST_CASE("greedy matching agrees with the exhaustive reference") {
    std::mt19937_64 g(16);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<ScoredBox> dets;
        std::vector<BBox> anns;
        const int nd = static_cast<int>(g() % 20);
        const int na = static_cast<int>(g() % 12);
        for (int i = 0; i < nd; ++i) {
            dets.push_back({random_box(g, 25.0), std::round(score(g) * 20.0) / 20.0, 0});
        }
        for (int i = 0; i < na; ++i) anns.push_back(random_box(g, 25.0));
        const MatchResult got = greedy_match(dets, anns, 0.5);
        oracle::RefMatch want = oracle::ref_match(dets, anns, 0.5);
        // greedy_match reports pairs sorted by detection index, the oracle in visit order
        std::sort(want.pairs.begin(), want.pairs.end());
        REQUIRE(got.pairs.size() == want.pairs.size());
        for (std::size_t i = 0; i < got.pairs.size(); ++i) {
            CHECK(got.pairs[i].detection == want.pairs[i].first);
            CHECK(got.pairs[i].annotation == want.pairs[i].second);
        }
        CHECK(got.pairs.size() + got.unmatched_detections.size() == dets.size());
        CHECK(got.pairs.size() + got.unmatched_annotations.size() == anns.size());
    }
}

TEST_CASE("matching is one-to-one and respects the iou floor") {
    std::vector<ScoredBox> dets = {{{0, 0, 10, 10}, 0.9, 0},
                                   {{1, 1, 11, 11}, 0.8, 0},
                                   {{50, 50, 60, 60}, 0.7, 0}};
    std::vector<BBox> anns = {{0, 0, 10, 10}, {100, 100, 110, 110}};
    const MatchResult r = greedy_match(dets, anns, 0.5);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].detection == 0);
    CHECK(r.pairs[0].annotation == 0);
    CHECK(r.unmatched_detections == std::vector<std::size_t>{1, 2});
    CHECK(r.unmatched_annotations == std::vector<std::size_t>{1});
}
