#include "ppose/losses.hpp"

#include <cmath>

namespace ppose {

using nn::MaskMat;
using nn::Mat;
using nn::Tape;
using nn::Var;

namespace {
constexpr double kProbEps = 1e-8;

double clamp_p(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

Var zero_scalar(Tape& t) { return t.constant(Mat::Zero(1, 1)); }
}  // namespace

double focal_loss(double p, int target, double alpha, double gamma) {
    p = clamp_p(p);
    if (target)
        return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double focal_loss_grad(double p, int target, double alpha, double gamma) {
    p = clamp_p(p);
    if (target)
        return alpha * gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) -
               alpha * std::pow(1.0 - p, gamma) / p;
    return -(1.0 - alpha) * gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) +
           (1.0 - alpha) * std::pow(p, gamma) / (1.0 - p);
}

Var focal_loss_node(Tape& t, Var logits, const MaskMat& targets, double alpha, double gamma,
                    double normalizer, const MaskMat* include) {
    const Mat& z = t.val(logits);
    if (targets.rows() != z.rows() || targets.cols() != z.cols())
        throw ValidationError("focal_loss_node: target shape mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
            if (include && !(*include)(i, j)) continue;
            const double p = 1.0 / (1.0 + std::exp(-z(i, j)));
            acc += focal_loss(p, targets(i, j), alpha, gamma);
        }
    Mat value(1, 1);
    value(0, 0) = acc / normalizer;
    MaskMat inc = include ? *include : MaskMat();
    return t.custom(std::move(value), {logits},
                    [logits, targets, alpha, gamma, normalizer, inc](Tape& t, int self) {
                        if (!t.requires_grad(logits)) return;
                        const double up = t.grad(Var{self})(0, 0) / normalizer;
                        const Mat& z = t.val(logits);
                        Mat& g = t.grad(logits);
                        for (Eigen::Index i = 0; i < z.rows(); ++i)
                            for (Eigen::Index j = 0; j < z.cols(); ++j) {
                                if (inc.size() && !inc(i, j)) continue;
                                const double p = 1.0 / (1.0 + std::exp(-z(i, j)));
                                const double pc = clamp_p(p);
                                g(i, j) += up * focal_loss_grad(pc, targets(i, j), alpha, gamma) *
                                           pc * (1.0 - pc);
                            }
                    });
}

Var box_l1_node(Tape& t, Var boxes, const std::vector<int>& rows, const std::vector<Box>& targets,
                double normalizer) {
    if (rows.size() != targets.size()) throw ValidationError("box_l1_node: size mismatch");
    if (rows.empty()) return zero_scalar(t);
    const Mat& b = t.val(boxes);
    double acc = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const int r = rows[k];
        acc += std::abs(b(r, 0) - targets[k].cx) + std::abs(b(r, 1) - targets[k].cy) +
               std::abs(b(r, 2) - targets[k].w) + std::abs(b(r, 3) - targets[k].h);
    }
    Mat value(1, 1);
    value(0, 0) = acc / normalizer;
    return t.custom(std::move(value), {boxes},
                    [boxes, rows, targets, normalizer](Tape& t, int self) {
                        if (!t.requires_grad(boxes)) return;
                        const double up = t.grad(Var{self})(0, 0) / normalizer;
                        const Mat& b = t.val(boxes);
                        Mat& g = t.grad(boxes);
                        auto sgn = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
                        for (std::size_t k = 0; k < rows.size(); ++k) {
                            const int r = rows[k];
                            g(r, 0) += up * sgn(b(r, 0) - targets[k].cx);
                            g(r, 1) += up * sgn(b(r, 1) - targets[k].cy);
                            g(r, 2) += up * sgn(b(r, 2) - targets[k].w);
                            g(r, 3) += up * sgn(b(r, 3) - targets[k].h);
                        }
                    });
}

Var box_giou_node(Tape& t, Var boxes, const std::vector<int>& rows,
                  const std::vector<Box>& targets, double normalizer) {
    if (rows.size() != targets.size()) throw ValidationError("box_giou_node: size mismatch");
    if (rows.empty()) return zero_scalar(t);
    const Mat& b = t.val(boxes);
    double acc = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const int r = rows[k];
        const Box pred{b(r, 0), b(r, 1), b(r, 2), b(r, 3)};
        acc += 1.0 - giou(pred, targets[k]);
    }
    Mat value(1, 1);
    value(0, 0) = acc / normalizer;
    return t.custom(std::move(value), {boxes},
                    [boxes, rows, targets, normalizer](Tape& t, int self) {
                        if (!t.requires_grad(boxes)) return;
                        const double up = t.grad(Var{self})(0, 0) / normalizer;
                        const Mat& b = t.val(boxes);
                        Mat& g = t.grad(boxes);
                        for (std::size_t k = 0; k < rows.size(); ++k) {
                            const int r = rows[k];
                            const Box pred{b(r, 0), b(r, 1), b(r, 2), b(r, 3)};
                            std::array<double, 4> dp{}, dt{};
                            giou_grad(pred, targets[k], dp, dt);
                            for (int c = 0; c < 4; ++c)
                                g(r, c) -= up * dp[static_cast<std::size_t>(c)];
                        }
                    });
}

Var kpt_l1_node(Tape& t, Var coords, const std::vector<int>& rows,
                const std::vector<std::array<double, 2>>& targets, double normalizer) {
    if (rows.size() != targets.size()) throw ValidationError("kpt_l1_node: size mismatch");
    if (rows.empty()) return zero_scalar(t);
    const Mat& c = t.val(coords);
    double acc = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k)
        acc += std::abs(c(rows[k], 0) - targets[k][0]) + std::abs(c(rows[k], 1) - targets[k][1]);
    Mat value(1, 1);
    value(0, 0) = acc / normalizer;
    return t.custom(std::move(value), {coords},
                    [coords, rows, targets, normalizer](Tape& t, int self) {
                        if (!t.requires_grad(coords)) return;
                        const double up = t.grad(Var{self})(0, 0) / normalizer;
                        const Mat& c = t.val(coords);
                        Mat& g = t.grad(coords);
                        auto sgn = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
                        for (std::size_t k = 0; k < rows.size(); ++k) {
                            g(rows[k], 0) += up * sgn(c(rows[k], 0) - targets[k][0]);
                            g(rows[k], 1) += up * sgn(c(rows[k], 1) - targets[k][1]);
                        }
                    });
}

namespace {

KeypointSet coords_to_kpts(const Mat& c, int begin, std::size_t k) {
    KeypointSet out;
    out.points.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.points[i].x = c(begin + static_cast<int>(i), 0);
        out.points[i].y = c(begin + static_cast<int>(i), 1);
        out.points[i].v = Visibility::visible;
    }
    return out;
}

}  // namespace

Var oks_node(Tape& t, Var coords, const std::vector<OksTarget>& targets, double normalizer) {
    if (targets.empty()) return zero_scalar(t);
    const Mat& c = t.val(coords);
    double acc = 0.0;
    for (const OksTarget& tgt : targets) {
        const KeypointSet pred = coords_to_kpts(c, tgt.row_begin, tgt.gt.size());
        acc += 1.0 - oks(pred, tgt.gt, tgt.area, tgt.sigmas);
    }
    Mat value(1, 1);
    value(0, 0) = acc / normalizer;
    return t.custom(std::move(value), {coords},
                    [coords, targets, normalizer](Tape& t, int self) {
                        if (!t.requires_grad(coords)) return;
                        const double up = t.grad(Var{self})(0, 0) / normalizer;
                        const Mat& c = t.val(coords);
                        Mat& g = t.grad(coords);
                        for (const OksTarget& tgt : targets) {
                            const KeypointSet pred = coords_to_kpts(c, tgt.row_begin, tgt.gt.size());
                            std::vector<std::array<double, 2>> dp;
                            oks_grad(pred, tgt.gt, tgt.area, tgt.sigmas, dp);
                            for (std::size_t i = 0; i < dp.size(); ++i) {
                                g(tgt.row_begin + static_cast<int>(i), 0) -= up * dp[i][0];
                                g(tgt.row_begin + static_cast<int>(i), 1) -= up * dp[i][1];
                            }
                        }
                    });
}

namespace {

// Assembles value-space detections of one object layer for the matcher.
std::vector<Detection> layer_detections(Tape& t, const TotalLossInputs& in, std::size_t layer) {
    const Mat& boxes = t.val(in.obj_layers[layer].boxes);
    const Mat& logits = t.val(in.obj_layers[layer].logits);
    const Mat* coords = in.kpt_layers.empty() ? nullptr : &t.val(in.kpt_layers.back().coords);
    std::vector<Detection> dets(static_cast<std::size_t>(boxes.rows()));
    for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
        Detection& d = dets[static_cast<std::size_t>(i)];
        d.box = Box{boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)};
        d.obj_logits.resize(static_cast<std::size_t>(logits.cols()));
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            d.obj_logits[static_cast<std::size_t>(j)] = logits(i, j);
        if (!in.class_of.empty()) d.cls = in.class_of[static_cast<std::size_t>(i)];
        if (coords && static_cast<std::size_t>(i) < in.groups.size()) {
            const auto& g = in.groups[static_cast<std::size_t>(i)];
            d.kpts = coords_to_kpts(*coords, g[0], static_cast<std::size_t>(g[1] - g[0]));
        }
    }
    return dets;
}

}  // namespace

TotalLossResult total_loss(nn::GraphCtx& ctx, const TotalLossInputs& in) {
    Tape& t = ctx.tape();
    if (in.obj_layers.empty()) throw ValidationError("total_loss: no decoder layers");
    const LossWeights& w = in.weights;
    const int n_gt = static_cast<int>(in.gts.size());

    TotalLossResult res;

    // --- object-level terms, matched per layer ---
    std::vector<Var> reg_obj_terms, align_obj_terms;
    for (std::size_t l = 0; l < in.obj_layers.size(); ++l) {
        MatchResult m;
        if (in.frozen_matching) {
            m = *in.frozen_matching;
        } else {
            const auto dets = layer_detections(t, in, l);
            m = hungarian(match_cost(dets, in.gts, w.cost()));
        }

        std::vector<int> rows;
        std::vector<Box> boxes;
        for (const auto& pr : m.pairs) {
            rows.push_back(pr[0]);
            boxes.push_back(in.gts[static_cast<std::size_t>(pr[1])].box);
        }
        const double norm = std::max<std::size_t>(1, rows.size());
        Var l1 = box_l1_node(t, in.obj_layers[l].boxes, rows, boxes, norm);
        Var gi = box_giou_node(t, in.obj_layers[l].boxes, rows, boxes, norm);
        reg_obj_terms.push_back(t.add(t.scale(l1, w.w_l1), t.scale(gi, w.w_giou)));

        const Mat& logits = t.val(in.obj_layers[l].logits);
        MaskMat targets = MaskMat::Zero(logits.rows(), logits.cols());
        for (const auto& pr : m.pairs) {
            const int cls = in.gts[static_cast<std::size_t>(pr[1])].cls;
            if (cls >= 0 && cls < logits.cols()) targets(pr[0], cls) = 1;
        }
        align_obj_terms.push_back(t.scale(
            focal_loss_node(t, in.obj_layers[l].logits, targets, w.alpha, w.gamma,
                            std::max(1, n_gt)),
            w.w_cls));

        res.obj_matchings.push_back(std::move(m));
    }
    res.final_matching = res.obj_matchings.back();

    // --- keypoint-level terms under the final assignment ---
    std::vector<Var> reg_kpt_terms, align_kpt_terms;
    if (!in.kpt_layers.empty()) {
        std::vector<int> vis_rows;
        std::vector<std::array<double, 2>> vis_targets;
        std::vector<OksTarget> oks_targets;
        std::vector<std::array<int, 2>> positives;  // (row, col)
        for (const auto& pr : res.final_matching.pairs) {
            const int slot = pr[0];
            const GroundTruth& gt = in.gts[static_cast<std::size_t>(pr[1])];
            if (slot >= static_cast<int>(in.groups.size())) continue;
            if (in.class_of[static_cast<std::size_t>(slot)] != gt.cls) continue;
            const auto& g = in.groups[static_cast<std::size_t>(slot)];
            if (g[1] - g[0] != static_cast<int>(gt.kpts.size())) continue;

            int vis = 0;
            for (std::size_t k = 0; k < gt.kpts.size(); ++k) {
                const auto& p = gt.kpts.points[k];
                if (p.visible()) {
                    vis_rows.push_back(g[0] + static_cast<int>(k));
                    vis_targets.push_back({p.x, p.y});
                    ++vis;
                }
            }
            if (vis > 0 && gt.box.valid())
                oks_targets.push_back({g[0], gt.kpts, gt.sigmas, gt.box.area()});

            const auto& slice = in.slices[static_cast<std::size_t>(gt.cls)];
            for (int k = 0; k < g[1] - g[0]; ++k)
                positives.push_back({g[0] + k, slice[0] + k});
        }

        const double l1_norm = std::max<std::size_t>(1, vis_rows.size());
        const double oks_norm = std::max<std::size_t>(1, oks_targets.size());

        for (const auto& layer : in.kpt_layers) {
            Var l1 = kpt_l1_node(t, layer.coords, vis_rows, vis_targets, l1_norm);
            Var ok = oks_node(t, layer.coords, oks_targets, oks_norm);
            reg_kpt_terms.push_back(t.add(t.scale(l1, w.w_kpt_l1), t.scale(ok, w.w_oks)));

            const Mat& logits = t.val(layer.logits);
            MaskMat targets = MaskMat::Zero(logits.rows(), logits.cols());
            for (const auto& p : positives)
                if (p[1] < logits.cols()) targets(p[0], p[1]) = 1;
            MaskMat include;
            if (w.kpt_align_slice_only) {
                include = MaskMat::Zero(logits.rows(), logits.cols());
                for (std::size_t slot = 0; slot < in.groups.size(); ++slot) {
                    const int cls = in.class_of[slot];
                    if (cls < 0 || cls >= static_cast<int>(in.slices.size())) continue;
                    const auto& slice = in.slices[static_cast<std::size_t>(cls)];
                    for (int r = in.groups[slot][0]; r < in.groups[slot][1]; ++r)
                        for (int c = slice[0]; c < slice[1]; ++c) include(r, c) = 1;
                }
            }
            align_kpt_terms.push_back(t.scale(
                focal_loss_node(t, layer.logits, targets, w.alpha, w.gamma,
                                std::max<std::size_t>(1, positives.size()),
                                include.size() ? &include : nullptr),
                w.w_cls));
        }
    }

    auto average = [&t](const std::vector<Var>& terms) {
        if (terms.empty()) return t.constant(Mat::Zero(1, 1));
        Var acc = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) acc = t.add(acc, terms[i]);
        return t.scale(acc, 1.0 / static_cast<double>(terms.size()));
    };

    Var reg_obj = average(reg_obj_terms);
    Var reg_kpt = average(reg_kpt_terms);
    Var align_obj = average(align_obj_terms);
    Var align_kpt = average(align_kpt_terms);
    res.total = t.add(t.add(reg_obj, reg_kpt), t.add(align_obj, align_kpt));

    res.breakdown.reg_obj = t.val(reg_obj)(0, 0);
    res.breakdown.reg_kpt = t.val(reg_kpt)(0, 0);
    res.breakdown.align_obj = t.val(align_obj)(0, 0);
    res.breakdown.align_kpt = t.val(align_kpt)(0, 0);
    res.breakdown.total = t.val(res.total)(0, 0);
    return res;
}

}  // namespace ppose
