#include "ppose/nn.hpp"

#include <cmath>
#include <numbers>

namespace ppose::nn {

Mat& ParamStore::create(const std::string& name, int rows, int cols) {
    if (params_.count(name)) throw Error("param already exists: " + name);
    Param p;
    p.value = Mat::Zero(rows, cols);
    p.grad = Mat::Zero(rows, cols);
    return params_.emplace(name, std::move(p)).first->second.value;
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown param: " + name);
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown param: " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [_, p] : params_) p.grad.setZero();
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

void init_xavier(Mat& w, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> dist(-a, a);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
}

void init_normal(Mat& w, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
}

void AdamW::apply(ParamStore& store) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& [name, p] : store.all()) {
        if (p.m.size() == 0) {
            p.m = Mat::Zero(p.value.rows(), p.value.cols());
            p.v = Mat::Zero(p.value.rows(), p.value.cols());
        }
        p.m = beta1 * p.m + (1.0 - beta1) * p.grad;
        p.v = beta2 * p.v + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
        const Mat mh = p.m / bc1;
        const Mat vh = p.v / bc2;
        p.value -= lr * (mh.array() / (vh.array().sqrt() + eps)).matrix();
        p.value -= lr * weight_decay * p.value;
        p.grad.setZero();
    }
}

Var GraphCtx::p(const std::string& name) {
    auto it = leased_.find(name);
    if (it != leased_.end()) return it->second;
    Var v = tape_.input(store_.at(name).value, train_);
    leased_.emplace(name, v);
    return v;
}

void GraphCtx::flush_grads() {
    for (auto& [name, var] : leased_) {
        const Mat& g = tape_.grad(var);
        if (g.size() != 0) store_.at(name).grad += g;
    }
}

FeatureGeometry FeatureGeometry::build(const std::vector<std::array<int, 2>>& shapes) {
    FeatureGeometry geo;
    geo.level_shapes = shapes;
    int total = 0;
    for (const auto& [h, w] : shapes) {
        geo.level_start.push_back(total);
        total += h * w;
    }
    geo.positions.resize(total, 2);
    int r = 0;
    for (const auto& [h, w] : shapes)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                geo.positions(r, 0) = (x + 0.5) / w;
                geo.positions(r, 1) = (y + 0.5) / h;
                ++r;
            }
    return geo;
}

Linear::Linear(ParamStore& s, std::mt19937_64& rng, const std::string& prefix, int in, int out,
               bool zero_init)
    : w_name(prefix + ".W"), b_name(prefix + ".b") {
    Mat& w = s.create(w_name, in, out);
    s.create(b_name, 1, out);
    if (!zero_init) init_xavier(w, rng);
}

Var Linear::forward(GraphCtx& ctx, Var x) const {
    return ctx.tape().add_row_broadcast(ctx.tape().matmul(x, ctx.p(w_name)), ctx.p(b_name));
}

LayerNorm::LayerNorm(ParamStore& s, const std::string& prefix, int dim)
    : g_name(prefix + ".g"), b_name(prefix + ".b") {
    s.create(g_name, 1, dim).setOnes();
    s.create(b_name, 1, dim);
}

Var LayerNorm::forward(GraphCtx& ctx, Var x) const {
    return ctx.tape().layer_norm_rows(x, ctx.p(g_name), ctx.p(b_name));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& s, std::mt19937_64& rng,
                                       const std::string& prefix, int dim, int heads)
    : dim(dim), heads(heads) {
    if (heads <= 0 || dim % heads != 0)
        throw ConfigError("mha: dim must be divisible by heads");
    wq = Linear(s, rng, prefix + ".q", dim, dim);
    wk = Linear(s, rng, prefix + ".k", dim, dim);
    wv = Linear(s, rng, prefix + ".v", dim, dim);
    wo = Linear(s, rng, prefix + ".o", dim, dim);
    norm = LayerNorm(s, prefix + ".norm", dim);
}

Var MultiHeadAttention::forward(GraphCtx& ctx, const TokenSequence& q, const TokenSequence& kv,
                                const MaskMat* attn_mask, AttnDebug* debug, Var q_pos,
                                Var k_pos) const {
    Tape& t = ctx.tape();
    const int n = static_cast<int>(t.val(q.tokens).rows());
    const int m = static_cast<int>(t.val(kv.tokens).rows());
    const int dh = dim / heads;

    Var q_in = q_pos.valid() ? t.add(q.tokens, q_pos) : q.tokens;
    Var k_in = k_pos.valid() ? t.add(kv.tokens, k_pos) : kv.tokens;
    Var qp = wq.forward(ctx, q_in);
    Var kp = wk.forward(ctx, k_in);
    Var vp = wv.forward(ctx, kv.tokens);

    // Merge the key-validity mask and the optional attention mask.
    MaskMat mask;
    const bool has_kv_mask = !kv.mask.empty();
    if (has_kv_mask || attn_mask) {
        mask = MaskMat::Constant(n, m, 1);
        if (has_kv_mask)
            for (int j = 0; j < m; ++j)
                if (!kv.mask[static_cast<std::size_t>(j)]) mask.col(j).setZero();
        if (attn_mask) {
            if (attn_mask->rows() != n || attn_mask->cols() != m)
                throw Error("mha: attention mask shape mismatch");
            mask = mask.cwiseProduct(*attn_mask);
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = t.slice_cols(qp, h * dh, dh);
        Var kh = t.slice_cols(kp, h * dh, dh);
        Var vh = t.slice_cols(vp, h * dh, dh);
        Var scores = t.scale(t.matmul_nt(qh, kh), scale);
        Var attn = t.softmax_rows(scores, mask.size() ? &mask : nullptr);
        if (debug) debug->head_weights.push_back(t.val(attn));
        head_outputs.push_back(t.matmul(attn, vh));
    }
    Var merged = heads == 1 ? head_outputs[0] : t.concat_cols(head_outputs);
    if (debug) debug->pre_output = t.val(merged);
    Var out = wo.forward(ctx, merged);
    return norm.forward(ctx, t.add(q.tokens, out));
}

FeedForward::FeedForward(ParamStore& s, std::mt19937_64& rng, const std::string& prefix, int dim,
                         int hidden) {
    fc1 = Linear(s, rng, prefix + ".fc1", dim, hidden);
    fc2 = Linear(s, rng, prefix + ".fc2", hidden, dim);
    norm = LayerNorm(s, prefix + ".norm", dim);
}

Var FeedForward::forward(GraphCtx& ctx, Var x) const {
    Tape& t = ctx.tape();
    Var h = t.relu(fc1.forward(ctx, x));
    return norm.forward(ctx, t.add(x, fc2.forward(ctx, h)));
}

// Sampling convention: pixel centers sit at ((j+0.5)/w, (i+0.5)/h); points
// inside [0,1]^2 are border-clamped (a constant field samples exactly to the
// constant anywhere in the unit square); points outside read zeros.
Eigen::RowVectorXd bilinear_at(const Mat& values, const FeatureGeometry& geo, int level, double x,
                               double y, int col0, int ncols) {
    if (ncols < 0) ncols = static_cast<int>(values.cols()) - col0;
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(ncols);
    if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) return out;
    const int h = geo.level_shapes[static_cast<std::size_t>(level)][0];
    const int w = geo.level_shapes[static_cast<std::size_t>(level)][1];
    const int start = geo.level_start[static_cast<std::size_t>(level)];
    const double u = std::clamp(x * w - 0.5, 0.0, static_cast<double>(w - 1));
    const double v = std::clamp(y * h - 0.5, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(std::floor(u)), w - 1);
    const int y0 = std::min(static_cast<int>(std::floor(v)), h - 1);
    const double fx = u - x0, fy = v - y0;
    const double wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int k = 0; k < 4; ++k) {
        if (xs[k] >= w || ys[k] >= h) continue;  // weight is 0 there
        out += wgt[k] * values.block(start + ys[k] * w + xs[k], col0, 1, ncols);
    }
    return out;
}

Var deformable_sample(Tape& tape, Var values, const FeatureGeometry& geo, const Mat& ref_points,
                      Var offsets, Var weight_logits, int heads, int points) {
    const Mat& vmat = tape.val(values);
    const Mat& off = tape.val(offsets);
    const Mat& wlog = tape.val(weight_logits);
    const int n = static_cast<int>(off.rows());
    const int levels = geo.levels();
    const int c = static_cast<int>(vmat.cols());
    if (c % heads != 0) throw ConfigError("deformable_sample: dim must divide heads");
    const int dh = c / heads;
    const int lp = levels * points;
    if (off.cols() != heads * lp * 2 || wlog.cols() != heads * lp ||
        ref_points.rows() != n || wlog.rows() != n)
        throw Error("deformable_sample: shape mismatch");

    // Softmax per (query, head) over levels x points.
    Mat attn(n, heads * lp);
    for (int i = 0; i < n; ++i)
        for (int h = 0; h < heads; ++h) {
            const int base = h * lp;
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < lp; ++k) mx = std::max(mx, wlog(i, base + k));
            double z = 0;
            for (int k = 0; k < lp; ++k) {
                const double e = std::exp(wlog(i, base + k) - mx);
                attn(i, base + k) = e;
                z += e;
            }
            for (int k = 0; k < lp; ++k) attn(i, base + k) /= z;
        }

    Mat out = Mat::Zero(n, c);
    for (int i = 0; i < n; ++i)
        for (int h = 0; h < heads; ++h)
            for (int l = 0; l < levels; ++l)
                for (int p = 0; p < points; ++p) {
                    const int k = (h * levels + l) * points + p;
                    const double sx = ref_points(i, 0) + off(i, 2 * k);
                    const double sy = ref_points(i, 1) + off(i, 2 * k + 1);
                    out.block(i, h * dh, 1, dh) +=
                        attn(i, k) * bilinear_at(vmat, geo, l, sx, sy, h * dh, dh);
                }

    return tape.custom(
        std::move(out), {values, offsets, weight_logits},
        [values, offsets, weight_logits, geo, ref_points, attn = std::move(attn), heads, points,
         levels, dh](Tape& t, int self) {
            const Mat& g = t.grad(Var{self});
            const Mat& vmat = t.val(values);
            const Mat& off = t.val(offsets);
            const int n = static_cast<int>(off.rows());
            const int lp = levels * points;
            const bool need_v = t.requires_grad(values);
            const bool need_o = t.requires_grad(offsets);
            const bool need_w = t.requires_grad(weight_logits);
            Mat* gv = need_v ? &t.grad(values) : nullptr;
            Mat* go = need_o ? &t.grad(offsets) : nullptr;
            Mat* gw = need_w ? &t.grad(weight_logits) : nullptr;

            for (int i = 0; i < n; ++i)
                for (int h = 0; h < heads; ++h) {
                    // d(loss)/d(raw attention weight) feeds the softmax jacobian.
                    Eigen::VectorXd draw = Eigen::VectorXd::Zero(lp);
                    for (int l = 0; l < levels; ++l) {
                        const int hgt = geo.level_shapes[static_cast<std::size_t>(l)][0];
                        const int wid = geo.level_shapes[static_cast<std::size_t>(l)][1];
                        const int start = geo.level_start[static_cast<std::size_t>(l)];
                        for (int p = 0; p < points; ++p) {
                            const int k = (h * levels + l) * points + p;
                            const double sx = ref_points(i, 0) + off(i, 2 * k);
                            const double sy = ref_points(i, 1) + off(i, 2 * k + 1);
                            if (sx < 0.0 || sx > 1.0 || sy < 0.0 || sy > 1.0) continue;
                            const double u_raw = sx * wid - 0.5;
                            const double v_raw = sy * hgt - 0.5;
                            const double u = std::clamp(u_raw, 0.0, static_cast<double>(wid - 1));
                            const double v = std::clamp(v_raw, 0.0, static_cast<double>(hgt - 1));
                            const double dux = (u_raw > 0.0 && u_raw < wid - 1) ? wid : 0.0;
                            const double dvy = (v_raw > 0.0 && v_raw < hgt - 1) ? hgt : 0.0;
                            const int x0 = std::min(static_cast<int>(std::floor(u)), wid - 1);
                            const int y0 = std::min(static_cast<int>(std::floor(v)), hgt - 1);
                            const double fx = u - x0, fy = v - y0;
                            const double wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy),
                                                   (1 - fx) * fy, fx * fy};
                            const double dwx[4] = {-(1 - fy), (1 - fy), -fy, fy};
                            const double dwy[4] = {-(1 - fx), -fx, (1 - fx), fx};
                            const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
                            const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
                            const double a = attn(i, k);
                            double s_dot_g = 0.0, dx_dot_g = 0.0, dy_dot_g = 0.0;
                            for (int q = 0; q < 4; ++q) {
                                if (xs[q] >= wid || ys[q] >= hgt) continue;
                                const int row = start + ys[q] * wid + xs[q];
                                const double dot =
                                    g.block(i, h * dh, 1, dh)
                                        .cwiseProduct(vmat.block(row, h * dh, 1, dh))
                                        .sum();
                                s_dot_g += wgt[q] * dot;
                                dx_dot_g += dwx[q] * dot;
                                dy_dot_g += dwy[q] * dot;
                                if (need_v)
                                    gv->block(row, h * dh, 1, dh) +=
                                        a * wgt[q] * g.block(i, h * dh, 1, dh);
                            }
                            draw(k - h * lp) = s_dot_g;
                            if (need_o) {
                                (*go)(i, 2 * k) += a * dx_dot_g * dux;
                                (*go)(i, 2 * k + 1) += a * dy_dot_g * dvy;
                            }
                        }
                    }
                    if (need_w) {
                        double mean = 0.0;
                        for (int k = 0; k < lp; ++k) mean += attn(i, h * lp + k) * draw(k);
                        for (int k = 0; k < lp; ++k)
                            (*gw)(i, h * lp + k) += attn(i, h * lp + k) * (draw(k) - mean);
                    }
                }
        });
}

DeformableAttention::DeformableAttention(ParamStore& s, std::mt19937_64& rng,
                                         const std::string& prefix, int dim, int heads,
                                         int levels, int points)
    : dim(dim), heads(heads), levels(levels), points(points) {
    if (heads <= 0 || dim % heads != 0)
        throw ConfigError("deformable_attn: dim must be divisible by heads");
    if (points < 1) throw ConfigError("deformable_attn: points must be >= 1");
    value_proj = Linear(s, rng, prefix + ".value", dim, dim);
    offset_proj = Linear(s, rng, prefix + ".offset", dim, heads * levels * points * 2, true);
    weight_proj = Linear(s, rng, prefix + ".weight", dim, heads * levels * points, true);
    out_proj = Linear(s, rng, prefix + ".out", dim, dim);
    norm = LayerNorm(s, prefix + ".norm", dim);

    // Spread initial sampling points on per-head rays, one ring per point.
    Mat& ob = s.at(offset_proj.b_name).value;
    for (int h = 0; h < heads; ++h) {
        const double ang = 2.0 * std::numbers::pi * h / heads;
        for (int l = 0; l < levels; ++l)
            for (int p = 0; p < points; ++p) {
                const int k = (h * levels + l) * points + p;
                const double r = 0.02 * (p + 1);
                ob(0, 2 * k) = r * std::cos(ang);
                ob(0, 2 * k + 1) = r * std::sin(ang);
            }
    }
}

Var DeformableAttention::forward(GraphCtx& ctx, Var queries, const Mat& ref_points,
                                 const FeatureMap& fmap, const Mat* offset_scale, Var query_pos,
                                 AttnDebug* debug) const {
    Tape& t = ctx.tape();
    Var q_in = query_pos.valid() ? t.add(queries, query_pos) : queries;
    Var v = value_proj.forward(ctx, fmap.tokens);
    Var off = offset_proj.forward(ctx, q_in);
    if (offset_scale) {
        Var sc = t.tile_cols(t.constant(*offset_scale), heads * levels * points * 2);
        off = t.cmul(off, sc);
    }
    Var wlog = weight_proj.forward(ctx, q_in);
    Var sampled = deformable_sample(t, v, fmap.geo, ref_points, off, wlog, heads, points);
    if (debug) debug->pre_output = t.val(sampled);
    Var out = out_proj.forward(ctx, sampled);
    return norm.forward(ctx, t.add(queries, out));
}

}  // namespace ppose::nn
