#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "ppose/error.hpp"

namespace ppose::ad {

using Mat = Eigen::MatrixXd;
using MaskMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Handle into a Tape. Only meaningful together with the tape that made it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records one forward computation; backward() walks the nodes in
// reverse creation order (creation order is topological by construction).
// Tapes are single-threaded; build one per forward pass.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf nodes.
    Var constant(Mat v) { return make_leaf(std::move(v), false); }
    Var input(Mat v, bool requires_grad = true) { return make_leaf(std::move(v), requires_grad); }

    const Mat& val(Var v) const { return nodes_[check(v)].value; }
    // Gradient accumulated for v; zero matrix if backward never reached it.
    Mat& grad(Var v);
    bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Elementwise / broadcast arithmetic.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cmul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    // a (N x C) + row (1 x C), broadcast over rows.
    Var add_row_broadcast(Var a, Var row);
    // a * s and a + s where s is a 1x1 variable.
    Var mul_scalar_var(Var a, Var s);
    Var add_scalar_var(Var a, Var s);

    // Structure.
    Var transpose(Var a);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_rows(Var a, int r0, int n);
    Var slice_cols(Var a, int c0, int n);
    Var gather_rows(Var a, std::vector<int> rows);
    // Repeats source columns cyclically: out.col(j) = a.col(j % a.cols()).
    Var tile_cols(Var a, int out_cols);

    // Matrix products.
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T

    // Nonlinearities and normalization.
    Var relu(Var a);
    Var sigmoid(Var a);
    Var exp(Var a);
    // Row-wise softmax. `allowed`, when given, must match the shape; entries
    // with allowed==0 get weight exactly 0. A fully masked row yields zeros.
    Var softmax_rows(Var a, const MaskMat* allowed = nullptr);
    // Row-wise layer norm with affine gain/bias (both 1 x C).
    Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

    // Reductions.
    Var sum(Var a);
    Var mean(Var a);
    Var mean_rows(Var a);  // N x C -> 1 x C

    // Custom node: `back` receives this tape and the node's own id; it must
    // read grad(self) and accumulate into its parents' grads.
    Var custom(Mat value, const std::vector<Var>& parents,
               std::function<void(Tape&, int self)> back);

    // Seeds d(root)/d(root) = 1 (root must be 1x1) and propagates.
    void backward(Var root);

  private:
    struct Node {
        Mat value;
        Mat grad;  // empty until touched
        bool requires_grad = false;
        std::function<void(Tape&, int)> back;
    };

    int check(Var v) const;
    Var make_leaf(Mat v, bool rg);
    Var make_op(Mat value, std::initializer_list<Var> parents,
                std::function<void(Tape&, int)> back);
    bool any_grad(std::initializer_list<Var> vs) const;

    std::vector<Node> nodes_;
};

// Numerically safe logit of p clamped to [eps, 1-eps]. Plain math, no tape.
double inverse_sigmoid(double p, double eps = 1e-6);

}  // namespace ppose::ad
