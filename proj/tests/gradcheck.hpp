#pragma once

#include <functional>
#include <vector>

#include "ppose/nn.hpp"
#include "ppose/tensor.hpp"

namespace ppose::testutil {

using ad::Mat;
using ad::Tape;
using ad::Var;

// Builds the graph twice per perturbed entry and compares the analytic
// gradient against central finite differences.
// `f` must build a scalar from freshly created input vars on each call.
struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

inline GradCheckResult check_gradients(
    std::vector<Mat> inputs,
    const std::function<Var(Tape&, const std::vector<Var>&)>& f, double step = 1e-5) {
    auto eval = [&](const std::vector<Mat>& ins) {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(ins.size());
        for (const Mat& m : ins) vars.push_back(t.input(m, true));
        return t.val(f(t, vars))(0, 0);
    };

    Tape t;
    std::vector<Var> vars;
    for (const Mat& m : inputs) vars.push_back(t.input(m, true));
    Var root = f(t, vars);
    t.backward(root);

    GradCheckResult res;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Mat analytic = t.grad(vars[i]);
        Mat numeric(inputs[i].rows(), inputs[i].cols());
        for (Eigen::Index r = 0; r < inputs[i].rows(); ++r)
            for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
                std::vector<Mat> plus = inputs, minus = inputs;
                plus[i](r, c) += step;
                minus[i](r, c) -= step;
                numeric(r, c) = (eval(plus) - eval(minus)) / (2.0 * step);
            }
        // Relative error with a scale-aware floor: entries far below the
        // typical gradient magnitude sit in finite-difference noise and do
        // not measure gradient quality.
        const double gmax =
            std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
        for (Eigen::Index r = 0; r < inputs[i].rows(); ++r)
            for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
                const double num = numeric(r, c), ana = analytic(r, c);
                const double abs_err = std::abs(num - ana);
                const double denom =
                    std::max({std::abs(num), std::abs(ana), 1e-3 * gmax, 1e-10});
                res.max_abs_err = std::max(res.max_abs_err, abs_err);
                res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
            }
    }
    return res;
}

inline Mat random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
}

// Gradient check through the parameter store. `loss` must build a fresh
// tape, run backward, flush gradients into the store, and return the value.
template <class F>
GradCheckResult check_param_gradients(nn::ParamStore& store, const std::vector<std::string>& names,
                                      F&& loss, double step = 1e-5) {
    store.zero_grads();
    loss();
    std::vector<Mat> analytic;
    for (const auto& n : names) analytic.push_back(store.at(n).grad);

    GradCheckResult res;
    for (std::size_t ni = 0; ni < names.size(); ++ni) {
        Mat& v = store.at(names[ni]).value;
        Mat numeric(v.rows(), v.cols());
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index c = 0; c < v.cols(); ++c) {
                const double orig = v(r, c);
                v(r, c) = orig + step;
                store.zero_grads();
                const double fp = loss();
                v(r, c) = orig - step;
                store.zero_grads();
                const double fm = loss();
                v(r, c) = orig;
                numeric(r, c) = (fp - fm) / (2.0 * step);
            }
        const double gmax =
            std::max(analytic[ni].cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index c = 0; c < v.cols(); ++c) {
                const double abs_err = std::abs(numeric(r, c) - analytic[ni](r, c));
                const double denom = std::max(
                    {std::abs(numeric(r, c)), std::abs(analytic[ni](r, c)), 1e-3 * gmax, 1e-10});
                res.max_abs_err = std::max(res.max_abs_err, abs_err);
                res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
            }
    }
    store.zero_grads();
    return res;
}

}  // namespace ppose::testutil
