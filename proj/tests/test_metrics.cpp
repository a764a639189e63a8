#include "ppose/metrics.hpp"

#include <cmath>

#include "doctest.h"

using namespace ppose;

namespace {

GroundTruth simple_gt(int cls, Box b, std::vector<Keypoint> kps) {
    GroundTruth g;
    g.cls = cls;
    g.box = b;
    g.kpts.points = std::move(kps);
    g.sigmas = uniform_sigmas(g.kpts.size());
    return g;
}

Detection det_from_gt(const GroundTruth& g, double score) {
    Detection d;
    d.cls = g.cls;
    d.box = g.box;
    d.score = score;
    d.obj_logits = {score};
    d.kpts = g.kpts;
    for (auto& p : d.kpts.points) p.v = Visibility::visible;
    return d;
}

}  // namespace

TEST_CASE("pck: perfect predictions and unreachable predictions") {
    GroundTruth g = simple_gt(0, {0.5, 0.5, 0.4, 0.4},
                              {{0.4, 0.4, Visibility::visible},
                               {0.6, 0.6, Visibility::visible},
                               {0.5, 0.5, Visibility::invisible}});
    Detection perfect = det_from_gt(g, 0.9);
    CHECK(evaluate_pck({{perfect}}, {{g}}) == doctest::Approx(1.0));

    Detection far = perfect;
    for (auto& p : far.kpts.points) {
        p.x = 0.01;
        p.y = 0.01;
    }
    CHECK(evaluate_pck({{far}}, {{g}}) == doctest::Approx(0.0));

    // no detections at all: every visible keypoint is a miss
    CHECK(evaluate_pck({{}}, {{g}}) == doctest::Approx(0.0));
}

TEST_CASE("pck boundary: exactly t * max(w, h) counts as correct") {
    // box 0.4 x 0.2 -> threshold distance = 0.2 * 0.4 = 0.08 exactly
    GroundTruth g = simple_gt(0, {0.5, 0.5, 0.4, 0.2}, {{0.5, 0.5, Visibility::visible}});
    Detection d = det_from_gt(g, 1.0);
    d.kpts.points[0].x = 0.5 + 0.08;  // hand-computed boundary case
    CHECK(evaluate_pck({{d}}, {{g}}, 0.2) == doctest::Approx(1.0));

    d.kpts.points[0].x = 0.5 + 0.0801;
    CHECK(evaluate_pck({{d}}, {{g}}, 0.2) == doctest::Approx(0.0));
}

TEST_CASE("pck requires visible ground truth") {
    GroundTruth g = simple_gt(0, {0.5, 0.5, 0.4, 0.4}, {{0.4, 0.4, Visibility::invisible}});
    CHECK_THROWS_AS(evaluate_pck({{}}, {{g}}), DomainError);
}

TEST_CASE("ap: perfect detector scores 1, empty predictions score 0") {
    GroundTruth g = simple_gt(0, {0.5, 0.5, 0.4, 0.4},
                              {{0.4, 0.4, Visibility::visible}, {0.6, 0.6, Visibility::visible}});
    Detection d = det_from_gt(g, 1.0);
    ApResult perfect = evaluate_ap({{d}}, {{g}});
    CHECK(perfect.ap == doctest::Approx(1.0));
    CHECK(perfect.per_threshold.size() == 10);
    for (const auto& [thr, ap] : perfect.per_threshold) CHECK(ap == doctest::Approx(1.0));

    CHECK(evaluate_ap({{}}, {{g}}).ap == doctest::Approx(0.0));
}

TEST_CASE("ap matches the hand-executed 101-point oracle") {
    GroundTruth g = simple_gt(0, {0.5, 0.5, 0.4, 0.4},
                              {{0.4, 0.4, Visibility::visible}, {0.6, 0.6, Visibility::visible}});

    SUBCASE("one true positive plus one higher-scored false positive") {
        Detection tp = det_from_gt(g, 0.8);
        Detection fp = det_from_gt(g, 0.9);
        for (auto& p : fp.kpts.points) {
            p.x = 0.05;  // OKS ~ 0 -> unmatched at every threshold
            p.y = 0.05;
        }
        // Hand execution: ranked [fp, tp]; precision after each detection
        // is [0, 1/2]; recall [0, 1]. The monotone envelope is [1/2, 1/2],
        // so all 101 recall points read precision 1/2 at every threshold.
        ApResult r = evaluate_ap({{fp, tp}}, {{g}});
        CHECK(r.ap == doctest::Approx(0.5));
    }

    SUBCASE("two ground truths, one false positive in between") {
        GroundTruth g2 = simple_gt(0, {0.3, 0.3, 0.2, 0.2},
                                   {{0.25, 0.25, Visibility::visible},
                                    {0.35, 0.35, Visibility::visible}});
        Detection tp1 = det_from_gt(g, 0.9);
        Detection fp = det_from_gt(g, 0.8);
        for (auto& p : fp.kpts.points) {
            p.x = 0.95;
            p.y = 0.95;
        }
        Detection tp2 = det_from_gt(g2, 0.7);
        // Hand execution: ranked [tp1, fp, tp2]; precision [1, 1/2, 2/3],
        // recall [1/2, 1/2, 1]; envelope [1, 2/3, 2/3]. Recall points
        // r = 0.00..0.50 (51 of them) read 1, the remaining 50 read 2/3:
        // AP = (51 + 100/3) / 101.
        const double expected = (51.0 + 100.0 / 3.0) / 101.0;
        ApResult r = evaluate_ap({{tp1, fp, tp2}}, {{g, g2}});
        CHECK(r.ap == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("ap greedy matching respects the oks threshold ladder") {
    // Single keypoint at distance d so that OKS = exp(-d^2/(2*area*sigma^2))
    // lands between thresholds: target OKS ~ 0.72.
    const double area = 0.16, sigma = 0.1;
    const double target = 0.72;
    const double d = std::sqrt(-2.0 * area * sigma * sigma * std::log(target));
    GroundTruth g = simple_gt(0, {0.5, 0.5, 0.4, 0.4}, {{0.5, 0.5, Visibility::visible}});
    Detection det = det_from_gt(g, 0.9);
    det.kpts.points[0].x += d;

    ApResult r = evaluate_ap({{det}}, {{g}});
    for (const auto& [thr, ap] : r.per_threshold) {
        if (thr <= 0.70)
            CHECK(ap == doctest::Approx(1.0));
        else
            CHECK(ap == doctest::Approx(0.0));
    }
}

TEST_CASE("ap averages over the categories present in the ground truth") {
    GroundTruth a = simple_gt(0, {0.3, 0.3, 0.2, 0.2}, {{0.3, 0.3, Visibility::visible}});
    GroundTruth b = simple_gt(1, {0.7, 0.7, 0.2, 0.2}, {{0.7, 0.7, Visibility::visible}});
    Detection da = det_from_gt(a, 0.9);  // perfect class 0
    // class 1 has no predictions at all
    ApResult r = evaluate_ap({{da}}, {{a, b}});
    CHECK(r.ap == doctest::Approx(0.5));
}
