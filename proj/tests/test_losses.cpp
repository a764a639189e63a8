#include "ppose/losses.hpp"

#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"

using namespace ppose;
using ad::MaskMat;
using ad::Mat;
using ad::Tape;
using ad::Var;
using testutil::random_mat;

TEST_CASE("focal loss values") {
    CHECK(focal_loss(1.0, 1, 0.25, 2.0) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(focal_loss(0.5, 1, 0.25, 2.0) == doctest::Approx(0.25 * 0.25 * std::log(2.0)));

    // gamma = 0, alpha = 0.5 halves binary cross-entropy.
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int i = 0; i < 50; ++i) {
        const double p = u(rng);
        const double bce1 = -std::log(p);
        const double bce0 = -std::log(1.0 - p);
        CHECK(focal_loss(p, 1, 0.5, 0.0) == doctest::Approx(0.5 * bce1));
        CHECK(focal_loss(p, 0, 0.5, 0.0) == doctest::Approx(0.5 * bce0));
    }
}

TEST_CASE("focal loss clamps extreme probabilities") {
    CHECK(std::isfinite(focal_loss(0.0, 1, 0.25, 2.0)));
    CHECK(std::isfinite(focal_loss(1.0, 0, 0.25, 2.0)));
}

TEST_CASE("focal loss gradient matches finite differences") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const double h = 1e-6;
    for (int i = 0; i < 40; ++i) {
        const double p = u(rng);
        for (int target : {0, 1}) {
            const double num =
                (focal_loss(p + h, target, 0.25, 2.0) - focal_loss(p - h, target, 0.25, 2.0)) /
                (2 * h);
            const double ana = focal_loss_grad(p, target, 0.25, 2.0);
            CHECK(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}) < 1e-4);
        }
    }
}

TEST_CASE("focal node gradient in logit space") {
    std::mt19937_64 rng(7);
    Mat z = random_mat(4, 3, rng);
    MaskMat targets = MaskMat::Zero(4, 3);
    targets(0, 1) = 1;
    targets(2, 0) = 1;
    auto res = testutil::check_gradients(
        {z},
        [&](Tape& t, const std::vector<Var>& v) {
            return focal_loss_node(t, v[0], targets, 0.25, 2.0, 2.0);
        });
    CHECK(res.max_rel_err < 1e-4);
}

namespace {

// One tiny two-object scene on a tape, with a frozen matching.
struct Scene {
    Mat boxes;   // 3 x 4 predictions
    Mat logits;  // 3 x 2
    Mat coords;  // (3 groups x 2 kpts) x 2
    Mat klogits;
    std::vector<GroundTruth> gts;
    TotalLossInputs inputs(Tape& t, const LossWeights& w, const MatchResult* frozen) const {
        TotalLossInputs in;
        in.obj_layers = {{t.input(boxes, true), t.input(logits, true)}};
        in.kpt_layers = {{t.input(coords, true), t.input(klogits, true)}};
        in.groups = {{0, 2}, {2, 4}, {4, 6}};
        in.class_of = {0, 1, 0};
        in.slices = {{0, 2}, {2, 4}};
        in.gts = gts;
        in.weights = w;
        in.frozen_matching = frozen;
        return in;
    }
};

Scene make_scene(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.3, 0.7);
    Scene s;
    s.boxes.resize(3, 4);
    s.boxes << 0.4, 0.4, 0.25, 0.3, 0.65, 0.6, 0.3, 0.22, 0.5, 0.5, 0.2, 0.2;
    s.logits = testutil::random_mat(3, 2, rng);
    s.coords = testutil::random_mat(6, 2, rng).cwiseAbs();
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 2; ++j) s.coords(i, j) = 0.3 + 0.4 * std::fmod(s.coords(i, j), 1.0);
    s.klogits = testutil::random_mat(6, 4, rng);

    // Ground-truth boxes chosen so no box edge ties a prediction edge
    // exactly (gradient checks need a kink-free neighborhood).
    GroundTruth a;
    a.cls = 0;
    a.box = {0.423, 0.413, 0.237, 0.271};
    a.kpts.points = {{u(rng), u(rng), Visibility::visible}, {u(rng), u(rng), Visibility::invisible}};
    a.sigmas = uniform_sigmas(2);
    GroundTruth b;
    b.cls = 1;
    b.box = {0.603, 0.617, 0.282, 0.197};
    b.kpts.points = {{u(rng), u(rng), Visibility::visible}, {u(rng), u(rng), Visibility::visible}};
    b.sigmas = uniform_sigmas(2);
    s.gts = {a, b};
    return s;
}

}  // namespace

TEST_CASE("total loss: component sum and perfect-fit limit") {
    std::mt19937_64 rng(11);
    Scene s = make_scene(rng);

    SUBCASE("total equals the sum of the four terms") {
        Tape t;
        nn::ParamStore store;
        nn::GraphCtx ctx(t, store, true);
        auto in = s.inputs(t, LossWeights{}, nullptr);
        auto res = total_loss(ctx, in);
        CHECK(res.breakdown.total == doctest::Approx(res.breakdown.reg_obj + res.breakdown.reg_kpt +
                                                     res.breakdown.align_obj +
                                                     res.breakdown.align_kpt));
    }

    SUBCASE("predictions equal to ground truth with saturated logits") {
        Scene p = s;
        p.boxes.row(0) << s.gts[0].box.cx, s.gts[0].box.cy, s.gts[0].box.w, s.gts[0].box.h;
        p.boxes.row(1) << s.gts[1].box.cx, s.gts[1].box.cy, s.gts[1].box.w, s.gts[1].box.h;
        p.boxes.row(2) << 0.9, 0.9, 0.01, 0.01;
        p.logits.setConstant(-40.0);
        p.logits(0, 0) = 40.0;
        p.logits(1, 1) = 40.0;
        for (int g = 0; g < 2; ++g)
            for (int k = 0; k < 2; ++k) {
                p.coords(2 * g + k, 0) = s.gts[static_cast<std::size_t>(g)].kpts.points[static_cast<std::size_t>(k)].x;
                p.coords(2 * g + k, 1) = s.gts[static_cast<std::size_t>(g)].kpts.points[static_cast<std::size_t>(k)].y;
            }
        p.klogits.setConstant(-40.0);
        p.klogits(0, 0) = 40.0;
        p.klogits(1, 1) = 40.0;
        p.klogits(2, 2) = 40.0;
        p.klogits(3, 3) = 40.0;
        // unmatched group 2 stays all-negative

        Tape t;
        nn::ParamStore store;
        nn::GraphCtx ctx(t, store, true);
        auto in = p.inputs(t, LossWeights{}, nullptr);
        auto res = total_loss(ctx, in);
        CHECK(res.breakdown.total < 1e-3);
    }
}

TEST_CASE("total loss: doubling w_giou moves reg_obj by exactly the giou share") {
    std::mt19937_64 rng(13);
    Scene s = make_scene(rng);
    MatchResult frozen;
    frozen.pairs = {{0, 0}, {1, 1}};
    frozen.unmatched_preds = {2};

    auto run = [&](const LossWeights& w) {
        Tape t;
        nn::ParamStore store;
        nn::GraphCtx ctx(t, store, true);
        auto in = s.inputs(t, w, &frozen);
        return total_loss(ctx, in).breakdown;
    };
    LossWeights base;
    LossWeights doubled = base;
    doubled.w_giou *= 2.0;
    LossWeights no_giou = base;
    no_giou.w_giou = 0.0;

    const double giou_share = run(base).reg_obj - run(no_giou).reg_obj;
    CHECK(run(doubled).reg_obj ==
          doctest::Approx(run(base).reg_obj + giou_share).epsilon(1e-9));
}

TEST_CASE("total loss: zero ground truths produce zero reg and all-negative align") {
    std::mt19937_64 rng(17);
    Scene s = make_scene(rng);
    s.gts.clear();
    Tape t;
    nn::ParamStore store;
    nn::GraphCtx ctx(t, store, true);
    auto in = s.inputs(t, LossWeights{}, nullptr);
    auto res = total_loss(ctx, in);
    CHECK(res.breakdown.reg_obj == 0.0);
    CHECK(res.breakdown.reg_kpt == 0.0);
    CHECK(res.breakdown.align_obj > 0.0);
    CHECK(res.final_matching.pairs.empty());
}

TEST_CASE("total loss gradients match finite differences with frozen matching") {
    std::mt19937_64 rng(19);
    Scene s = make_scene(rng);
    MatchResult frozen;
    frozen.pairs = {{0, 0}, {1, 1}};
    frozen.unmatched_preds = {2};
    LossWeights w;

    auto res = testutil::check_gradients(
        {s.boxes, s.logits, s.coords, s.klogits},
        [&](Tape& t, const std::vector<Var>& v) {
            nn::ParamStore store;
            nn::GraphCtx ctx(t, store, true);
            TotalLossInputs in;
            in.obj_layers = {{v[0], v[1]}};
            in.kpt_layers = {{v[2], v[3]}};
            in.groups = {{0, 2}, {2, 4}, {4, 6}};
            in.class_of = {0, 1, 0};
            in.slices = {{0, 2}, {2, 4}};
            in.gts = s.gts;
            in.weights = w;
            in.frozen_matching = &frozen;
            return total_loss(ctx, in).total;
        });
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("invisible ground-truth keypoints receive zero gradient") {
    std::mt19937_64 rng(23);
    Scene s = make_scene(rng);  // gt 0 keypoint 1 is invisible
    MatchResult frozen;
    frozen.pairs = {{0, 0}, {1, 1}};
    Tape t;
    nn::ParamStore store;
    nn::GraphCtx ctx(t, store, true);
    auto in = s.inputs(t, LossWeights{}, &frozen);
    auto res = total_loss(ctx, in);
    t.backward(res.total);
    const Mat& g = t.grad(in.kpt_layers[0].coords);
    CHECK(g.row(1).cwiseAbs().sum() == 0.0);  // group 0, slot 1
    CHECK(g.row(0).cwiseAbs().sum() > 0.0);
}

TEST_CASE("total loss is invariant to prediction order") {
    std::mt19937_64 rng(29);
    Scene s = make_scene(rng);

    auto run = [&](const Scene& sc) {
        Tape t;
        nn::ParamStore store;
        nn::GraphCtx ctx(t, store, true);
        auto in = sc.inputs(t, LossWeights{}, nullptr);
        return total_loss(ctx, in).breakdown;
    };

    // Swap prediction slots 0 and 1 everywhere (boxes, logits, groups'
    // contents, classes); the matching absorbs the permutation.
    Scene sw = s;
    sw.boxes.row(0).swap(sw.boxes.row(1));
    sw.logits.row(0).swap(sw.logits.row(1));
    sw.coords.row(0).swap(sw.coords.row(2));
    sw.coords.row(1).swap(sw.coords.row(3));
    sw.klogits.row(0).swap(sw.klogits.row(2));
    sw.klogits.row(1).swap(sw.klogits.row(3));
    std::swap(sw.gts, s.gts);  // keep gts identical (no-op swap for clarity)
    std::swap(s.gts, sw.gts);

    // class_of must follow the slot swap: slots are (1,0,2) classes (1,0,0).
    Tape t;
    nn::ParamStore store;
    nn::GraphCtx ctx(t, store, true);
    TotalLossInputs in = sw.inputs(t, LossWeights{}, nullptr);
    in.class_of = {1, 0, 0};
    auto swapped = total_loss(ctx, in).breakdown;
    auto base = run(s);
    CHECK(swapped.total == doctest::Approx(base.total).epsilon(1e-12));
    CHECK(swapped.reg_kpt == doctest::Approx(base.reg_kpt).epsilon(1e-12));
}
