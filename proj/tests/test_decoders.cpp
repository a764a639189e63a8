#include "ppose/decoders.hpp"

#include <random>

#include "doctest.h"
#include "gradcheck.hpp"

using namespace ppose;
using ad::Mat;
using ad::Tape;
using ad::Var;
using testutil::random_mat;

namespace {

DecoderConfig small_cfg() {
    DecoderConfig c;
    c.dim = 16;
    c.heads = 2;
    c.obj_layers = 2;
    c.kpt_layers = 2;
    c.num_queries = 6;
    c.points_per_level = 2;
    c.ffn_hidden = 32;
    c.fourier_bands = 4;
    return c;
}

struct Setup {
    nn::ParamStore store;
    QuerySelector selector;
    ObjectDecoder obj_dec;
    KeypointDecoder kpt_dec;
    nn::FeatureGeometry geo;
    std::mt19937_64 rng{17};

    Setup() {
        std::mt19937_64 init(5);
        DecoderConfig cfg = small_cfg();
        selector = QuerySelector(store, init, "sel", cfg);
        obj_dec = ObjectDecoder(store, init, "obj", cfg, 2);
        kpt_dec = KeypointDecoder(store, init, "kpt", cfg, 2);
        geo = nn::FeatureGeometry::build({{4, 4}, {2, 2}});
    }

    EnhancedPair enhanced(Tape& t, int n_obj_rows = 2, int n_kpt_rows = 7) {
        EnhancedPair e;
        e.fmap.geo = geo;
        e.fmap.tokens = t.input(random_mat(20, 16, rng), false);
        e.prompts.obj = t.input(random_mat(n_obj_rows, 16, rng), false);
        e.prompts.kpt = t.input(random_mat(n_kpt_rows, 16, rng), false);
        e.prompts.slices = {{0, 4}, {4, 7}};
        return e;
    }
};

}  // namespace

TEST_CASE("top_n_by_score: argsort oracle and stable ties") {
    Eigen::VectorXd s(4);
    s << 0.1, 0.9, 0.4, 0.8;
    CHECK(top_n_by_score(s, 2) == std::vector<int>{1, 3});

    Eigen::VectorXd eq = Eigen::VectorXd::Constant(5, 0.7);
    CHECK(top_n_by_score(eq, 3) == std::vector<int>{0, 1, 2});

    CHECK_THROWS_AS(top_n_by_score(s, 5), ConfigError);
}

TEST_CASE("query selection monotonicity") {
    std::mt19937_64 rng(7);
    Eigen::VectorXd s(10);
    for (int i = 0; i < 10; ++i) s(i) = std::uniform_real_distribution<double>(0, 1)(rng);
    auto base = top_n_by_score(s, 4);
    for (int chosen : base) {
        Eigen::VectorXd boosted = s;
        boosted(chosen) += 0.5;
        auto again = top_n_by_score(boosted, 4);
        CHECK(std::find(again.begin(), again.end(), chosen) != again.end());
    }
}

TEST_CASE("select_queries anchors boxes at token positions when zeroed") {
    Setup s;
    s.store.at(s.selector.head_out.w_name).value.setZero();
    s.store.at(s.selector.head_out.b_name).value.setZero();

    Tape t;
    nn::GraphCtx ctx(t, s.store, false);
    EnhancedPair e = s.enhanced(t);
    ObjectQuerySet q = s.selector.select(ctx, e, 6);
    CHECK(t.val(q.embeddings).rows() == 6);
    const Mat boxes = t.val(t.sigmoid(q.ref_logits));
    for (int i = 0; i < 6; ++i) {
        const int row = q.token_rows[static_cast<std::size_t>(i)];
        CHECK(boxes(i, 0) == doctest::Approx(s.geo.positions(row, 0)).epsilon(1e-9));
        CHECK(boxes(i, 1) == doctest::Approx(s.geo.positions(row, 1)).epsilon(1e-9));
    }

    CHECK_THROWS_AS(s.selector.select(ctx, e, 21), ConfigError);
}

TEST_CASE("object decoder: deep supervision and additive refinement identity") {
    Setup s;
    Tape t;
    nn::GraphCtx ctx(t, s.store, false);
    EnhancedPair e = s.enhanced(t);
    ObjectQuerySet init = s.selector.select(ctx, e, 6);
    Mat init_boxes = t.val(t.sigmoid(init.ref_logits));

    ObjectDecodeResult r = s.obj_dec.decode(ctx, init, e);
    REQUIRE(r.layer_boxes.size() == 2);
    REQUIRE(r.layer_embeddings.size() == 2);
    for (const Var& b : r.layer_boxes) {
        CHECK(t.val(b).rows() == 6);
        CHECK(t.val(b).cols() == 4);
    }

    // zero refinement heads -> every layer's boxes equal the initial refs
    for (const auto& layer : s.obj_dec.layers) {
        s.store.at(layer.refine_out.w_name).value.setZero();
        s.store.at(layer.refine_out.b_name).value.setZero();
    }
    Tape t2;
    nn::GraphCtx ctx2(t2, s.store, false);
    EnhancedPair e2 = s.enhanced(t2);
    ObjectQuerySet init2 = s.selector.select(ctx2, e2, 6);
    Mat init_boxes2 = t2.val(t2.sigmoid(init2.ref_logits));
    ObjectDecodeResult r2 = s.obj_dec.decode(ctx2, init2, e2);
    for (const Var& b : r2.layer_boxes)
        CHECK((t2.val(b) - init_boxes2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("boxes stay valid across many random passes") {
    Setup s;
    for (int trial = 0; trial < 1000; ++trial) {
        Tape t;
        nn::GraphCtx ctx(t, s.store, false);
        EnhancedPair e = s.enhanced(t);
        ObjectQuerySet init = s.selector.select(ctx, e, 4);
        ObjectDecodeResult r = s.obj_dec.decode(ctx, init, e);
        for (const Var& b : r.layer_boxes) {
            const Mat& m = t.val(b);
            CHECK(m.minCoeff() > 0.0);
            CHECK(m.maxCoeff() < 1.0);
        }
    }
}

TEST_CASE("keypoint decoder grouping and center initialization") {
    Setup s;
    Tape t;
    nn::GraphCtx ctx(t, s.store, false);
    EnhancedPair e = s.enhanced(t);
    ObjectQuerySet init = s.selector.select(ctx, e, 6);
    ObjectDecodeResult objs = s.obj_dec.decode(ctx, init, e);

    // 3 objects of the 4-keypoint class 0 -> 12 queries, owners 0,0,0,0,1,...
    std::vector<int> rows = {0, 2, 4};
    std::vector<int> cls = {0, 0, 0};
    KeypointDecodeResult kr = s.kpt_dec.decode(ctx, objs, rows, cls, e);
    REQUIRE(kr.queries.groups.size() == 3);
    CHECK(t.val(kr.queries.embeddings).rows() == 12);
    for (int i = 0; i < 12; ++i)
        CHECK(kr.queries.owner[static_cast<std::size_t>(i)] == i / 4);
    REQUIRE(kr.layer_coords.size() == 2);

    // zero refinement -> all keypoints sit at their owner's box center
    for (const auto& layer : s.kpt_dec.layers) {
        s.store.at(layer.refine_out.w_name).value.setZero();
        s.store.at(layer.refine_out.b_name).value.setZero();
    }
    Tape t2;
    nn::GraphCtx ctx2(t2, s.store, false);
    EnhancedPair e2 = s.enhanced(t2);
    ObjectQuerySet init2 = s.selector.select(ctx2, e2, 6);
    ObjectDecodeResult objs2 = s.obj_dec.decode(ctx2, init2, e2);
    KeypointDecodeResult kr2 = s.kpt_dec.decode(ctx2, objs2, rows, cls, e2);
    const Mat boxes = t2.val(t2.sigmoid(objs2.queries.ref_logits));
    const Mat coords = t2.val(kr2.layer_coords.back());
    for (int g = 0; g < 3; ++g)
        for (int k = 0; k < 4; ++k) {
            CHECK(coords(4 * g + k, 0) == doctest::Approx(boxes(rows[static_cast<std::size_t>(g)], 0)));
            CHECK(coords(4 * g + k, 1) == doctest::Approx(boxes(rows[static_cast<std::size_t>(g)], 1)));
        }

    CHECK_THROWS_AS(s.kpt_dec.decode(ctx2, objs2, {0}, {5}, e2), ValidationError);
}

TEST_CASE("keypoint groups are isolated when cross-attention is silenced") {
    Setup s;
    // The refinement heads ship zero-initialized; give them random weights
    // so coordinate outputs actually depend on the embeddings.
    std::mt19937_64 wrng(57);
    auto randomize = [&](const nn::Linear& lin) {
        nn::init_xavier(s.store.at(lin.w_name).value, wrng);
        nn::init_normal(s.store.at(lin.b_name).value, wrng, 0.05);
    };
    for (const auto& layer : s.kpt_dec.layers) randomize(layer.refine_out);
    for (const auto& layer : s.obj_dec.layers) randomize(layer.refine_out);

    // Silence every path that could mix keypoint groups: the keypoint
    // decoder's cross-attentions, and the object decoder's prompt
    // cross-attention (owner embeddings must not read the poked rows).
    for (const auto& layer : s.kpt_dec.layers) {
        s.store.at(layer.prompt_cross.wo.w_name).value.setZero();
        s.store.at(layer.prompt_cross.wo.b_name).value.setZero();
        s.store.at(layer.image_cross.out_proj.w_name).value.setZero();
        s.store.at(layer.image_cross.out_proj.b_name).value.setZero();
    }
    for (const auto& layer : s.obj_dec.layers) {
        s.store.at(layer.prompt_cross.wo.w_name).value.setZero();
        s.store.at(layer.prompt_cross.wo.b_name).value.setZero();
    }

    // Two objects of different classes; perturb class 0's prompt slice and
    // check object B (class 1) keeps identical outputs.
    std::mt19937_64 rng(37);
    Mat fm = random_mat(20, 16, rng);
    Mat obj = random_mat(2, 16, rng);
    Mat kpt = random_mat(7, 16, rng);

    auto run = [&](const Mat& kpt_rows) {
        Tape t;
        nn::GraphCtx ctx(t, s.store, false);
        EnhancedPair e;
        e.fmap.geo = s.geo;
        e.fmap.tokens = t.input(fm, false);
        e.prompts.obj = t.input(obj, false);
        e.prompts.kpt = t.input(kpt_rows, false);
        e.prompts.slices = {{0, 4}, {4, 7}};
        ObjectQuerySet init = s.selector.select(ctx, e, 6);
        ObjectDecodeResult objs = s.obj_dec.decode(ctx, init, e);
        KeypointDecodeResult kr = s.kpt_dec.decode(ctx, objs, {0, 1}, {0, 1}, e);
        return Mat(t.val(kr.layer_coords.back()));
    };

    Mat base = run(kpt);
    Mat poked_in = kpt;
    poked_in.row(1).setConstant(9.0);  // class 0 slice
    Mat poked = run(poked_in);
    // object B owns rows 4..6 (class 1 has 3 keypoints)
    CHECK((poked.middleRows(4, 3) - base.middleRows(4, 3)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((poked.middleRows(0, 4) - base.middleRows(0, 4)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("classification rule: dot products, temperature, bias") {
    Mat q = Mat::Identity(3, 3);
    Mat p = Mat::Identity(3, 3);
    Mat swap = p;
    swap.row(1).swap(swap.row(2));
    Mat logits = classify_logits(q, swap, 1.0, 0.0);
    Eigen::Index best = -1;
    logits.row(1).maxCoeff(&best);
    CHECK(best == 2);

    std::mt19937_64 rng(41);
    Mat qq = random_mat(4, 8, rng), pp = random_mat(5, 8, rng);
    Mat full = classify_logits(qq, pp, 1.0, 0.0);
    Mat halved = classify_logits(qq, pp, 0.5, 0.0);
    CHECK((halved - 2.0 * full).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(full.rows() == 4);
    CHECK(full.cols() == 5);
    CHECK_THROWS_AS(classify_logits(qq, pp, 0.0, 0.0), ConfigError);
}

TEST_CASE("classify head starts at temperature 1/sqrt(C)") {
    nn::ParamStore store;
    ClassifyHead head(store, "cls", 16);
    std::mt19937_64 rng(43);
    Mat q = random_mat(3, 16, rng), p = random_mat(2, 16, rng);

    Tape t;
    nn::GraphCtx ctx(t, store, false);
    Var logits = head.forward(ctx, t.input(q, false), t.input(p, false));
    Mat expect = classify_logits(q, p, 1.0 / std::sqrt(16.0), -2.0);
    CHECK((t.val(logits) - expect).cwiseAbs().maxCoeff() < 1e-12);
}
