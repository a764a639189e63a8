#include "ppose/prompts.hpp"

#include <random>

#include "doctest.h"
#include "gradcheck.hpp"

using namespace ppose;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

TextEncoderConfig small_text_cfg() {
    TextEncoderConfig c;
    c.dim = 32;
    c.heads = 4;
    c.layers = 2;
    c.max_len = 16;
    c.ffn_hidden = 64;
    return c;
}

VisualEncoderConfig small_visual_cfg(int resolution = 64, int layers = 2) {
    VisualEncoderConfig c;
    c.dim = 32;
    c.heads = 4;
    c.layers = layers;
    c.resolution = resolution;
    c.patch = 16;
    c.fourier_bands = 8;
    c.ffn_hidden = 64;
    return c;
}

Vocabulary test_vocab() {
    return build_vocabulary({"A photo of a", "person cat chair", "left right eye ear nose",
                             "shoulder elbow wrist hip knee ankle", "seat leg back top"});
}

TextPrompt two_class_prompt(int k1 = 17, int k2 = 9) {
    TextPrompt p;
    TextPromptClass a{"person", {}, {}};
    for (int i = 0; i < k1; ++i) a.keypoint_names.push_back("kp person " + std::to_string(i));
    TextPromptClass b{"cat", {}, {}};
    for (int i = 0; i < k2; ++i) b.keypoint_names.push_back("kp cat " + std::to_string(i));
    p.classes = {a, b};
    return p;
}

VisualPrompt make_prompt_image(int resolution, int k, std::mt19937_64& rng,
                               int invisible_mask = 0) {
    std::uniform_real_distribution<double> u(0.1, 0.9);
    VisualPrompt vp;
    vp.object_name = "thing";
    vp.image = Image(resolution, resolution, {0.4, 0.5, 0.6});
    for (int i = 0; i < k; ++i) {
        vp.keypoint_names.push_back("kp " + std::to_string(i));
        Keypoint p{u(rng), u(rng),
                   (invisible_mask >> i) & 1 ? Visibility::invisible : Visibility::visible};
        vp.keypoints.points.push_back(p);
    }
    return vp;
}

}  // namespace

TEST_CASE("encode_text shape contract and slices") {
    std::mt19937_64 rng(3);
    nn::ParamStore store;
    Vocabulary vocab = test_vocab();
    TextEncoder enc(store, rng, "text", vocab, small_text_cfg());

    Tape t;
    nn::GraphCtx ctx(t, store, false);
    PromptFeatures f = enc.encode(ctx, two_class_prompt());
    CHECK(t.val(f.obj).rows() == 2);
    CHECK(t.val(f.obj).cols() == 32);
    CHECK(t.val(f.kpt).rows() == 26);
    REQUIRE(f.slices.size() == 2);
    CHECK(f.slices[0] == std::array<int, 2>{0, 17});
    CHECK(f.slices[1] == std::array<int, 2>{17, 26});
}

TEST_CASE("identical keypoint strings share one embedding row") {
    std::mt19937_64 rng(5);
    nn::ParamStore store;
    Vocabulary vocab = test_vocab();
    TextEncoder enc(store, rng, "text", vocab, small_text_cfg());

    TextPrompt p;
    p.classes = {{"person", {"left eye", "nose"}, {}}, {"cat", {"left eye", "tail"}, {}}};
    Tape t;
    nn::GraphCtx ctx(t, store, false);
    PromptFeatures f = enc.encode(ctx, p);
    const Mat& kpt = t.val(f.kpt);
    // "left eye" appears at rows 0 (person) and 2 (cat): identical rows.
    CHECK((kpt.row(0) - kpt.row(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((kpt.row(1) - kpt.row(3)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("encode_text is class-permutation equivariant") {
    std::mt19937_64 rng(7);
    nn::ParamStore store;
    Vocabulary vocab = test_vocab();
    TextEncoder enc(store, rng, "text", vocab, small_text_cfg());

    TextPrompt p = two_class_prompt(5, 3);
    TextPrompt q;
    q.classes = {p.classes[1], p.classes[0]};

    Tape t;
    nn::GraphCtx ctx(t, store, false);
    PromptFeatures fp = enc.encode(ctx, p);
    PromptFeatures fq = enc.encode(ctx, q);
    CHECK((t.val(fp.obj).row(0) - t.val(fq.obj).row(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((t.val(fp.obj).row(1) - t.val(fq.obj).row(0)).cwiseAbs().maxCoeff() == 0.0);
    // slice blocks move with their classes
    const Mat& kp = t.val(fp.kpt);
    const Mat& kq = t.val(fq.kpt);
    CHECK((kp.middleRows(0, 5) - kq.middleRows(3, 5)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((kp.middleRows(5, 3) - kq.middleRows(0, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode_visual shape contract (224 input, patch 16)") {
    std::mt19937_64 rng(9);
    nn::ParamStore store;
    VisualPromptEncoder enc(store, rng, "vp", small_visual_cfg(224, 1));
    VisualPrompt vp = make_prompt_image(224, 12, rng);

    Tape t;
    nn::GraphCtx ctx(t, store, false);
    PromptFeatures f = enc.encode(ctx, vp);
    CHECK(t.val(f.kpt).rows() == 12);
    CHECK(t.val(f.kpt).cols() == 32);
    CHECK(t.val(f.obj).rows() == 1);
    REQUIRE(f.slices.size() == 1);
    CHECK(f.slices[0] == std::array<int, 2>{0, 12});
}

TEST_CASE("all-invisible keypoints start from the shared mask token") {
    std::mt19937_64 rng(11);
    nn::ParamStore store;
    // zero encoder layers expose the raw initialization
    VisualPromptEncoder enc(store, rng, "vp", small_visual_cfg(64, 0));
    VisualPrompt vp = make_prompt_image(64, 12, rng, (1 << 12) - 1);

    Tape t;
    nn::GraphCtx ctx(t, store, false);
    PromptFeatures f = enc.encode(ctx, vp);
    const Mat& kpt = t.val(f.kpt);
    const Mat& mask = store.at("vp.mask_token").value;
    for (int i = 0; i < 12; ++i)
        CHECK((kpt.row(i) - mask.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("invisible keypoint coordinates are never read") {
    std::mt19937_64 rng(13);
    nn::ParamStore store;
    VisualPromptEncoder enc(store, rng, "vp", small_visual_cfg(64, 2));
    VisualPrompt vp = make_prompt_image(64, 6, rng, 0b001010);

    auto run = [&](const VisualPrompt& p) {
        Tape t;
        nn::GraphCtx ctx(t, store, false);
        PromptFeatures f = enc.encode(ctx, p);
        Mat out(t.val(f.kpt).rows() + 1, t.val(f.kpt).cols());
        out << t.val(f.kpt), t.val(f.obj);
        return out;
    };
    Mat base = run(vp);
    VisualPrompt poked = vp;
    poked.keypoints.points[1].x = -7.5;   // invisible slots
    poked.keypoints.points[1].y = 99.0;
    poked.keypoints.points[3].x = 1e9;
    CHECK((run(poked) - base).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("visible keypoints outside the unit square are rejected") {
    std::mt19937_64 rng(17);
    nn::ParamStore store;
    VisualPromptEncoder enc(store, rng, "vp", small_visual_cfg(64, 1));
    VisualPrompt vp = make_prompt_image(64, 3, rng);
    vp.keypoints.points[2].x = 1.25;

    Tape t;
    nn::GraphCtx ctx(t, store, false);
    CHECK_THROWS_AS(enc.encode(ctx, vp), ValidationError);

    VisualPrompt wrong_res = make_prompt_image(32, 3, rng);
    CHECK_THROWS_AS(enc.encode(ctx, wrong_res), ValidationError);
}

TEST_CASE("encoder outputs stay finite over random inputs") {
    std::mt19937_64 rng(19);
    nn::ParamStore store;
    Vocabulary vocab = test_vocab();
    TextEncoder text(store, rng, "text", vocab, small_text_cfg());
    VisualPromptEncoder vis(store, rng, "vp", small_visual_cfg(32, 1));

    std::uniform_int_distribution<int> kdist(1, 8);
    std::uniform_int_distribution<int> word(0, 25);
    for (int trial = 0; trial < 1000; ++trial) {
        Tape t;
        nn::GraphCtx ctx(t, store, false);
        if (trial % 2 == 0) {
            TextPrompt p;
            std::string obj = "obj" + std::to_string(word(rng));
            TextPromptClass c{obj, {}, {}};
            const int k = kdist(rng);
            for (int i = 0; i < k; ++i)
                c.keypoint_names.push_back("kp " + std::to_string(word(rng)) + " " +
                                           std::to_string(i));
            p.classes = {c};
            PromptFeatures f = text.encode(ctx, p);
            CHECK(t.val(f.obj).allFinite());
            CHECK(t.val(f.kpt).allFinite());
        } else {
            VisualPrompt vp = make_prompt_image(32, kdist(rng), rng, word(rng));
            PromptFeatures f = vis.encode(ctx, vp);
            CHECK(t.val(f.obj).allFinite());
            CHECK(t.val(f.kpt).allFinite());
        }
    }
}

TEST_CASE("encoder parameter gradients match finite differences") {
    std::mt19937_64 rng(23);
    nn::ParamStore store;
    Vocabulary vocab = test_vocab();
    TextEncoderConfig tc = small_text_cfg();
    tc.dim = 8;
    tc.heads = 2;
    tc.ffn_hidden = 16;
    TextEncoder text(store, rng, "text", vocab, tc);
    VisualEncoderConfig vc = small_visual_cfg(32, 1);
    vc.dim = 8;
    vc.heads = 2;
    vc.ffn_hidden = 16;
    nn::ParamStore vstore;
    VisualPromptEncoder vis(vstore, rng, "vp", vc);

    TextPrompt p;
    p.classes = {{"cat", {"left eye", "nose"}, {}}};
    VisualPrompt vp = make_prompt_image(32, 4, rng, 0b0010);

    Mat proj_t = testutil::random_mat(3, 8, rng);
    auto text_loss = [&]() {
        Tape t;
        nn::GraphCtx ctx(t, store, true);
        PromptFeatures f = text.encode(ctx, p);
        Var all = t.concat_rows({f.obj, f.kpt});
        Var loss = t.sum(t.cmul(all, t.constant(proj_t)));
        t.backward(loss);
        ctx.flush_grads();
        return t.val(loss)(0, 0);
    };
    auto res_t = testutil::check_param_gradients(store, {"text.embed", "text.layer0.attn.q.W"},
                                                 text_loss);
    CHECK(res_t.max_rel_err < 1e-4);

    Mat proj_v = testutil::random_mat(5, 8, rng);
    auto vis_loss = [&]() {
        Tape t;
        nn::GraphCtx ctx(t, vstore, true);
        PromptFeatures f = vis.encode(ctx, vp);
        Var all = t.concat_rows({f.obj, f.kpt});
        Var loss = t.sum(t.cmul(all, t.constant(proj_v)));
        t.backward(loss);
        ctx.flush_grads();
        return t.val(loss)(0, 0);
    };
    auto res_v = testutil::check_param_gradients(
        vstore, {"vp.mask_token", "vp.fourier.W", "vp.patch.W"}, vis_loss);
    CHECK(res_v.max_rel_err < 1e-4);
}

TEST_CASE("concat_prompts stitches class slices") {
    std::mt19937_64 rng(29);
    nn::ParamStore store;
    VisualPromptEncoder enc(store, rng, "vp", small_visual_cfg(32, 1));
    Tape t;
    nn::GraphCtx ctx(t, store, false);
    VisualPrompt a = make_prompt_image(32, 3, rng);
    VisualPrompt b = make_prompt_image(32, 5, rng);
    PromptFeatures fa = enc.encode(ctx, a);
    PromptFeatures fb = enc.encode(ctx, b);
    PromptFeatures f = concat_prompts(ctx, {fa, fb});
    CHECK(t.val(f.obj).rows() == 2);
    CHECK(t.val(f.kpt).rows() == 8);
    CHECK(f.slices[1] == std::array<int, 2>{3, 8});
    CHECK_THROWS_AS(concat_prompts(ctx, {}), ValidationError);
}
