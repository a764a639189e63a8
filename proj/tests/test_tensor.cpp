#include "ppose/tensor.hpp"

#include <random>

#include "doctest.h"
#include "gradcheck.hpp"

using namespace ppose;
using ad::MaskMat;
using ad::Mat;
using ad::Tape;
using ad::Var;
using testutil::check_gradients;
using testutil::random_mat;

TEST_CASE("forward values of basic ops") {
    Tape t;
    Mat a(2, 2), b(2, 2);
    a << 1, 2, 3, 4;
    b << 5, 6, 7, 8;
    Var va = t.input(a), vb = t.input(b);
    CHECK(t.val(t.add(va, vb))(1, 1) == 12);
    CHECK(t.val(t.matmul(va, vb))(0, 0) == 19);
    CHECK(t.val(t.matmul_nt(va, vb))(0, 0) == 17);
    CHECK(t.val(t.sum(va))(0, 0) == 10);
    CHECK(t.val(t.mean(va))(0, 0) == 2.5);
    CHECK(t.val(t.transpose(va))(0, 1) == 3);
    CHECK(t.val(t.relu(t.scale(va, -1.0))).sum() == 0);
}

TEST_CASE("softmax rows sum to one and respect masks") {
    std::mt19937_64 rng(7);
    Tape t;
    Mat x = random_mat(5, 9, rng);
    Var v = t.input(x);
    Mat y = t.val(t.softmax_rows(v));
    for (int i = 0; i < 5; ++i) CHECK(y.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

    MaskMat mask = MaskMat::Constant(5, 9, 1);
    mask.col(3).setZero();
    Mat ym = t.val(t.softmax_rows(v, &mask));
    for (int i = 0; i < 5; ++i) {
        CHECK(ym(i, 3) == 0.0);
        CHECK(ym.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }

    MaskMat dead = MaskMat::Zero(2, 3);
    Mat z = t.val(t.softmax_rows(t.input(random_mat(2, 3, rng)), &dead));
    CHECK(z.cwiseAbs().sum() == 0.0);
}

TEST_CASE("gradients of composite graphs match finite differences") {
    std::mt19937_64 rng(11);

    SUBCASE("matmul + relu + sum") {
        auto res = check_gradients(
            {random_mat(3, 4, rng), random_mat(4, 2, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.sum(t.relu(t.matmul(v[0], v[1])));
            });
        CHECK(res.max_rel_err < 1e-6);
    }

    SUBCASE("softmax attention pattern") {
        auto res = check_gradients(
            {random_mat(3, 5, rng), random_mat(4, 5, rng), random_mat(4, 6, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                Var scores = t.scale(t.matmul_nt(v[0], v[1]), 0.5);
                Var attn = t.softmax_rows(scores);
                return t.mean(t.matmul(attn, v[2]));
            });
        CHECK(res.max_rel_err < 1e-6);
    }

    SUBCASE("layer norm with affine") {
        auto res = check_gradients(
            {random_mat(4, 6, rng), random_mat(1, 6, rng), random_mat(1, 6, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.sum(t.cmul(t.layer_norm_rows(v[0], v[1], v[2]), v[0]));
            });
        CHECK(res.max_rel_err < 1e-5);
    }

    SUBCASE("sigmoid, exp and scalar-var ops") {
        auto res = check_gradients(
            {random_mat(3, 3, rng), random_mat(1, 1, rng), random_mat(1, 1, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                Var y = t.mul_scalar_var(t.sigmoid(v[0]), t.exp(v[1]));
                return t.sum(t.add_scalar_var(y, v[2]));
            });
        CHECK(res.max_rel_err < 1e-6);
    }

    SUBCASE("slicing, concatenation, gather, tile") {
        auto res = check_gradients(
            {random_mat(5, 4, rng), random_mat(5, 2, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                Var s = t.slice_cols(v[0], 1, 2);
                Var c = t.concat_cols({s, t.tile_cols(v[1], 4)});
                Var g = t.gather_rows(c, {0, 2, 2, 4});
                Var rows = t.concat_rows({g, t.gather_rows(c, {1, 3, 3, 1})});
                return t.sum(t.cmul(rows, rows));
            });
        CHECK(res.max_rel_err < 1e-6);
    }

    SUBCASE("broadcast add and mean_rows") {
        auto res = check_gradients(
            {random_mat(4, 3, rng), random_mat(1, 3, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.sum(t.cmul(t.mean_rows(t.add_row_broadcast(v[0], v[1])), v[1]));
            });
        CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("gradients accumulate across shared subexpressions") {
    Tape t;
    Mat x(1, 1);
    x << 3.0;
    Var v = t.input(x);
    Var y = t.add(t.cmul(v, v), t.scale(v, 2.0));  // x^2 + 2x
    t.backward(t.sum(y));
    CHECK(t.grad(v)(0, 0) == doctest::Approx(8.0));  // 2x + 2
}

TEST_CASE("constants receive no gradient work") {
    Tape t;
    Var c = t.constant(Mat::Ones(2, 2));
    Var v = t.input(Mat::Ones(2, 2), true);
    Var y = t.sum(t.cmul(c, v));
    t.backward(y);
    CHECK(t.requires_grad(c) == false);
    CHECK(t.grad(v).sum() == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar root") {
    Tape t;
    Var v = t.input(Mat::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(v), Error);
}
