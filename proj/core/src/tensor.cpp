#include "ppose/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace ppose::ad {

int Tape::check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw Error("tape: variable does not belong to this tape");
    return v.id;
}

Mat& Tape::grad(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var Tape::make_leaf(Mat v, bool rg) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
        if (nodes_[v.id].requires_grad) return true;
    return false;
}

Var Tape::make_op(Mat value, std::initializer_list<Var> parents,
                  std::function<void(Tape&, int)> back) {
    for (Var p : parents) check(p);
    Node n;
    n.value = std::move(value);
    n.requires_grad = any_grad(parents);
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::custom(Mat value, const std::vector<Var>& parents,
                 std::function<void(Tape&, int)> back) {
    bool rg = false;
    for (Var p : parents) {
        check(p);
        rg = rg || nodes_[p.id].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::add(Var a, Var b) {
    return make_op(val(a) + val(b), {a, b}, [a, b](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) t.grad(b) += g;
    });
}

Var Tape::sub(Var a, Var b) {
    return make_op(val(a) - val(b), {a, b}, [a, b](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) t.grad(b) -= g;
    });
}

Var Tape::cmul(Var a, Var b) {
    return make_op(val(a).cwiseProduct(val(b)), {a, b}, [a, b](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a) += g.cwiseProduct(t.val(b));
        if (t.requires_grad(b)) t.grad(b) += g.cwiseProduct(t.val(a));
    });
}

Var Tape::scale(Var a, double s) {
    return make_op(val(a) * s, {a}, [a, s](Tape& t, int self) {
        if (t.requires_grad(a)) t.grad(a) += t.grad(Var{self}) * s;
    });
}

Var Tape::add_scalar(Var a, double s) {
    return make_op(val(a).array() + s, {a}, [a](Tape& t, int self) {
        if (t.requires_grad(a)) t.grad(a) += t.grad(Var{self});
    });
}

Var Tape::add_row_broadcast(Var a, Var row) {
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
        throw Error("add_row_broadcast: row must be 1 x cols(a)");
    Mat out = val(a);
    out.rowwise() += val(row).row(0);
    return make_op(std::move(out), {a, row}, [a, row](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(row)) t.grad(row) += g.colwise().sum();
    });
}

Var Tape::mul_scalar_var(Var a, Var s) {
    if (val(s).size() != 1) throw Error("mul_scalar_var: s must be 1x1");
    const double sv = val(s)(0, 0);
    return make_op(val(a) * sv, {a, s}, [a, s, sv](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a) += g * sv;
        if (t.requires_grad(s)) t.grad(s)(0, 0) += g.cwiseProduct(t.val(a)).sum();
    });
}

Var Tape::add_scalar_var(Var a, Var s) {
    if (val(s).size() != 1) throw Error("add_scalar_var: s must be 1x1");
    return make_op(val(a).array() + val(s)(0, 0), {a, s}, [a, s](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(s)) t.grad(s)(0, 0) += g.sum();
    });
}

Var Tape::transpose(Var a) {
    return make_op(val(a).transpose(), {a}, [a](Tape& t, int self) {
        if (t.requires_grad(a)) t.grad(a) += t.grad(Var{self}).transpose();
    });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_rows: empty");
    Eigen::Index rows = 0;
    const Eigen::Index cols = val(parts[0]).cols();
    for (Var p : parts) {
        if (val(p).cols() != cols) throw Error("concat_rows: column mismatch");
        rows += val(p).rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        out.middleRows(r, val(p).rows()) = val(p);
        r += val(p).rows();
    }
    std::vector<Var> ps = parts;
    return custom(std::move(out), ps, [ps](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        Eigen::Index r = 0;
        for (Var p : ps) {
            const Eigen::Index n = t.val(p).rows();
            if (t.requires_grad(p)) t.grad(p) += g.middleRows(r, n);
            r += n;
        }
    });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_cols: empty");
    Eigen::Index cols = 0;
    const Eigen::Index rows = val(parts[0]).rows();
    for (Var p : parts) {
        if (val(p).rows() != rows) throw Error("concat_cols: row mismatch");
        cols += val(p).cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        out.middleCols(c, val(p).cols()) = val(p);
        c += val(p).cols();
    }
    std::vector<Var> ps = parts;
    return custom(std::move(out), ps, [ps](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        Eigen::Index c = 0;
        for (Var p : ps) {
            const Eigen::Index n = t.val(p).cols();
            if (t.requires_grad(p)) t.grad(p) += g.middleCols(c, n);
            c += n;
        }
    });
}

Var Tape::slice_rows(Var a, int r0, int n) {
    if (r0 < 0 || n < 0 || r0 + n > val(a).rows()) throw Error("slice_rows: out of range");
    return make_op(val(a).middleRows(r0, n), {a}, [a, r0, n](Tape& t, int self) {
        if (t.requires_grad(a)) t.grad(a).middleRows(r0, n) += t.grad(Var{self});
    });
}

Var Tape::slice_cols(Var a, int c0, int n) {
    if (c0 < 0 || n < 0 || c0 + n > val(a).cols()) throw Error("slice_cols: out of range");
    return make_op(val(a).middleCols(c0, n), {a}, [a, c0, n](Tape& t, int self) {
        if (t.requires_grad(a)) t.grad(a).middleCols(c0, n) += t.grad(Var{self});
    });
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), val(a).cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= val(a).rows()) throw Error("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = val(a).row(rows[i]);
    }
    return make_op(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t, int self) {
        if (!t.requires_grad(a)) return;
        const Mat& g = t.grad(Var{self});
        Mat& ga = t.grad(a);
        for (std::size_t i = 0; i < rows.size(); ++i)
            ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var Tape::tile_cols(Var a, int out_cols) {
    const int src = static_cast<int>(val(a).cols());
    if (src <= 0 || out_cols <= 0) throw Error("tile_cols: bad sizes");
    Mat out(val(a).rows(), out_cols);
    for (int j = 0; j < out_cols; ++j) out.col(j) = val(a).col(j % src);
    return make_op(std::move(out), {a}, [a, out_cols, src](Tape& t, int self) {
        if (!t.requires_grad(a)) return;
        const Mat& g = t.grad(Var{self});
        Mat& ga = t.grad(a);
        for (int j = 0; j < out_cols; ++j) ga.col(j % src) += g.col(j);
    });
}

Var Tape::matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows()) throw Error("matmul: inner dimension mismatch");
    Mat out(val(a).rows(), val(b).cols());
    out.noalias() = val(a) * val(b);
    return make_op(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a).noalias() += g * t.val(b).transpose();
        if (t.requires_grad(b)) t.grad(b).noalias() += t.val(a).transpose() * g;
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    if (val(a).cols() != val(b).cols()) throw Error("matmul_nt: inner dimension mismatch");
    Mat out(val(a).rows(), val(b).rows());
    out.noalias() = val(a) * val(b).transpose();
    return make_op(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Mat& g = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad(a).noalias() += g * t.val(b);
        if (t.requires_grad(b)) t.grad(b).noalias() += g.transpose() * t.val(a);
    });
}

Var Tape::relu(Var a) {
    return make_op(val(a).cwiseMax(0.0), {a}, [a](Tape& t, int self) {
        if (!t.requires_grad(a)) return;
        const Mat& g = t.grad(Var{self});
        t.grad(a).array() += g.array() * (t.val(a).array() > 0.0).cast<double>();
    });
}

Var Tape::sigmoid(Var a) {
    Mat y = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    Var out = make_leaf(std::move(y), nodes_[check(a)].requires_grad);
    Node& n = nodes_[out.id];
    if (n.requires_grad)
        n.back = [a, out](Tape& t, int self) {
            const Mat& g = t.grad(Var{self});
            const Mat& y = t.val(out);
            t.grad(a).array() += g.array() * y.array() * (1.0 - y.array());
        };
    return out;
}

Var Tape::exp(Var a) {
    Mat y = val(a).array().exp();
    Var out = make_leaf(std::move(y), nodes_[check(a)].requires_grad);
    Node& n = nodes_[out.id];
    if (n.requires_grad)
        n.back = [a, out](Tape& t, int self) {
            t.grad(a).array() += t.grad(Var{self}).array() * t.val(out).array();
        };
    return out;
}

Var Tape::softmax_rows(Var a, const MaskMat* allowed) {
    const Mat& x = val(a);
    if (allowed && (allowed->rows() != x.rows() || allowed->cols() != x.cols()))
        throw Error("softmax_rows: mask shape mismatch");
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (!allowed || (*allowed)(i, j)) mx = std::max(mx, x(i, j));
        if (!std::isfinite(mx)) {  // fully masked row
            y.row(i).setZero();
            continue;
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            double e = (!allowed || (*allowed)(i, j)) ? std::exp(x(i, j) - mx) : 0.0;
            y(i, j) = e;
            z += e;
        }
        y.row(i) /= z;
    }
    Var out = make_leaf(std::move(y), nodes_[check(a)].requires_grad);
    Node& n = nodes_[out.id];
    if (n.requires_grad)
        n.back = [a, out](Tape& t, int self) {
            const Mat& g = t.grad(Var{self});
            const Mat& y = t.val(out);
            Mat& ga = t.grad(a);
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
                ga.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
            }
        };
    return out;
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    const Mat& v = val(x);
    const Eigen::Index c = v.cols();
    if (val(gain).rows() != 1 || val(gain).cols() != c || val(bias).rows() != 1 ||
        val(bias).cols() != c)
        throw Error("layer_norm_rows: gain/bias must be 1 x cols(x)");
    Mat xhat(v.rows(), c);
    Eigen::VectorXd inv_std(v.rows());
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double mu = v.row(i).mean();
        const double var = (v.row(i).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(i) = is;
        xhat.row(i) = (v.row(i).array() - mu) * is;
    }
    Mat y = xhat;
    y.array().rowwise() *= val(gain).row(0).array();
    y.rowwise() += val(bias).row(0);
    return custom(
        std::move(y), {x, gain, bias},
        [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
            const Mat& g = t.grad(Var{self});
            const Eigen::Index c = xhat.cols();
            if (t.requires_grad(gain)) t.grad(gain) += g.cwiseProduct(xhat).colwise().sum();
            if (t.requires_grad(bias)) t.grad(bias) += g.colwise().sum();
            if (!t.requires_grad(x)) return;
            Mat& gx = t.grad(x);
            for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                Eigen::RowVectorXd dxhat =
                    g.row(i).cwiseProduct(t.val(gain).row(0));
                const double m1 = dxhat.mean();
                const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
                gx.row(i).array() +=
                    inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
                (void)c;
            }
        });
}

Var Tape::sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    return make_op(std::move(out), {a}, [a](Tape& t, int self) {
        if (t.requires_grad(a)) t.grad(a).array() += t.grad(Var{self})(0, 0);
    });
}

Var Tape::mean(Var a) {
    Mat out(1, 1);
    const double n = static_cast<double>(val(a).size());
    out(0, 0) = val(a).sum() / n;
    return make_op(std::move(out), {a}, [a, n](Tape& t, int self) {
        if (t.requires_grad(a)) t.grad(a).array() += t.grad(Var{self})(0, 0) / n;
    });
}

Var Tape::mean_rows(Var a) {
    Mat out = val(a).colwise().mean();
    const double n = static_cast<double>(val(a).rows());
    return make_op(std::move(out), {a}, [a, n](Tape& t, int self) {
        if (!t.requires_grad(a)) return;
        const Mat& g = t.grad(Var{self});
        t.grad(a).rowwise() += (g.row(0) / n);
    });
}

void Tape::backward(Var root) {
    Node& r = nodes_[check(root)];
    if (r.value.size() != 1) throw Error("backward: root must be a scalar (1x1)");
    grad(root)(0, 0) = 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || !n.back || n.grad.size() == 0) continue;
        n.back(*this, id);
    }
}

double inverse_sigmoid(double p, double eps) {
    const double q = std::clamp(p, eps, 1.0 - eps);
    return std::log(q / (1.0 - q));
}

}  // namespace ppose::ad
