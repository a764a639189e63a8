#include "ppose/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace ppose {

double snap_coord(double x) { return std::round(x * kCoordGrid) / kCoordGrid; }

std::array<double, 4> box_to_xyxy(const Box& b) {
    const double hw = b.w / 2.0, hh = b.h / 2.0;
    return {b.cx - hw, b.cy - hh, b.cx + hw, b.cy + hh};
}

Box box_from_xyxy(const std::array<double, 4>& c) {
    Box b;
    b.cx = (c[0] + c[2]) / 2.0;
    b.cy = (c[1] + c[3]) / 2.0;
    b.w = c[2] - c[0];
    b.h = c[3] - c[1];
    return b;
}

Visibility visibility_from_raw(int raw) {
    return raw == 0 ? Visibility::invisible : Visibility::visible;
}

double box_iou(const Box& a, const Box& b) {
    const auto ca = box_to_xyxy(a), cb = box_to_xyxy(b);
    const double iw = std::max(0.0, std::min(ca[2], cb[2]) - std::max(ca[0], cb[0]));
    const double ih = std::max(0.0, std::min(ca[3], cb[3]) - std::max(ca[1], cb[1]));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

void require_valid(const Box& b, const char* who) {
    if (!b.valid()) throw DomainError(std::string(who) + ": degenerate (zero-area) box");
}

}  // namespace

double giou(const Box& a, const Box& b) {
    std::array<double, 4> da, db;
    return giou_grad(a, b, da, db);
}

double giou_grad(const Box& a, const Box& b, std::array<double, 4>& da,
                 std::array<double, 4>& db) {
    require_valid(a, "giou");
    require_valid(b, "giou");

    const auto ca = box_to_xyxy(a), cb = box_to_xyxy(b);

    // Partials are first taken w.r.t. the 8 corner coordinates
    // (ax0 ay0 ax1 ay1 bx0 by0 bx1 by1), then chained to cxcywh.
    std::array<double, 8> d{};
    auto add = [&d](int i, double v) { d[i] += v; };

    const double ix0 = std::max(ca[0], cb[0]);
    const double iy0 = std::max(ca[1], cb[1]);
    const double ix1 = std::min(ca[2], cb[2]);
    const double iy1 = std::min(ca[3], cb[3]);
    const double iw = std::max(0.0, ix1 - ix0);
    const double ih = std::max(0.0, iy1 - iy0);
    const double inter = iw * ih;

    const double area_a = a.area(), area_b = b.area();
    const double uni = area_a + area_b - inter;

    const double ex0 = std::min(ca[0], cb[0]);
    const double ey0 = std::min(ca[1], cb[1]);
    const double ex1 = std::max(ca[2], cb[2]);
    const double ey1 = std::max(ca[3], cb[3]);
    const double ew = ex1 - ex0, eh = ey1 - ey0;
    const double enc = ew * eh;

    const double score = inter / uni - (enc - uni) / enc;

    // d(inter)/d(corners); subgradient picks the active min/max branch.
    std::array<double, 8> dI{};
    if (iw > 0.0 && ih > 0.0) {
        const bool x0a = ca[0] >= cb[0];  // ix0 comes from a
        const bool y0a = ca[1] >= cb[1];
        const bool x1a = ca[2] <= cb[2];  // ix1 comes from a
        const bool y1a = ca[3] <= cb[3];
        dI[x0a ? 0 : 4] -= ih;
        dI[y0a ? 1 : 5] -= iw;
        dI[x1a ? 2 : 6] += ih;
        dI[y1a ? 3 : 7] += iw;
    }

    // d(area_a), d(area_b) in corner space.
    std::array<double, 8> dU{};
    dU[0] -= a.h;
    dU[2] += a.h;
    dU[1] -= a.w;
    dU[3] += a.w;
    dU[4] -= b.h;
    dU[6] += b.h;
    dU[5] -= b.w;
    dU[7] += b.w;
    for (int i = 0; i < 8; ++i) dU[i] -= dI[i];

    std::array<double, 8> dE{};
    dE[ca[0] <= cb[0] ? 0 : 4] -= eh;
    dE[ca[1] <= cb[1] ? 1 : 5] -= ew;
    dE[ca[2] >= cb[2] ? 2 : 6] += eh;
    dE[ca[3] >= cb[3] ? 3 : 7] += ew;

    // score = I/U - 1 + U/E
    const double u2 = uni * uni, e2 = enc * enc;
    for (int i = 0; i < 8; ++i) {
        double g = (dI[i] * uni - inter * dU[i]) / u2 + (dU[i] * enc - uni * dE[i]) / e2;
        add(i, g);
    }

    // Chain corners -> (cx, cy, w, h).
    da = {d[0] + d[2], d[1] + d[3], 0.5 * (d[2] - d[0]), 0.5 * (d[3] - d[1])};
    db = {d[4] + d[6], d[5] + d[7], 0.5 * (d[6] - d[4]), 0.5 * (d[7] - d[5])};
    return score;
}

double oks(const KeypointSet& pred, const KeypointSet& gt, double area,
           const std::vector<double>& sigmas) {
    std::vector<std::array<double, 2>> dpred;
    return oks_grad(pred, gt, area, sigmas, dpred);
}

double oks_grad(const KeypointSet& pred, const KeypointSet& gt, double area,
                const std::vector<double>& sigmas,
                std::vector<std::array<double, 2>>& dpred) {
    if (pred.size() != gt.size()) throw ValidationError("oks: pred/gt length mismatch");
    if (sigmas.size() != gt.size()) throw ValidationError("oks: sigmas length mismatch");
    if (!(area > 0.0)) throw DomainError("oks: area must be positive");

    dpred.assign(pred.size(), {0.0, 0.0});
    int n_vis = 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!gt.points[i].visible()) continue;
        ++n_vis;
        const double dx = pred.points[i].x - gt.points[i].x;
        const double dy = pred.points[i].y - gt.points[i].y;
        const double denom = 2.0 * area * sigmas[i] * sigmas[i];
        const double e = std::exp(-(dx * dx + dy * dy) / denom);
        acc += e;
        dpred[i][0] = -2.0 * dx / denom * e;
        dpred[i][1] = -2.0 * dy / denom * e;
    }
    if (n_vis == 0) throw DomainError("oks: no visible ground-truth keypoint");
    for (auto& g : dpred) {
        g[0] /= n_vis;
        g[1] /= n_vis;
    }
    return acc / n_vis;
}

const std::vector<double>& coco_sigmas() {
    static const std::vector<double> s = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079,
                                          0.079, 0.072, 0.072, 0.062, 0.062, 0.107,
                                          0.107, 0.087, 0.087, 0.089, 0.089};
    return s;
}

std::vector<double> uniform_sigmas(std::size_t k, double sigma) {
    return std::vector<double>(k, sigma);
}

std::vector<double> fourier_embed(double x, double y, int bands, double scale) {
    if (bands < 1) throw ConfigError("fourier_embed: bands must be >= 1");
    std::vector<double> out(static_cast<std::size_t>(4 * bands));
    double f = scale;
    for (int b = 0; b < bands; ++b) {
        out[4 * b + 0] = std::sin(f * x);
        out[4 * b + 1] = std::cos(f * x);
        out[4 * b + 2] = std::sin(f * y);
        out[4 * b + 3] = std::cos(f * y);
        f *= 2.0;
    }
    return out;
}

void validate_swap_map(const SwapMap& m, std::size_t k) {
    if (m.size() != k) throw ConfigError("swap map: size mismatch with keypoint count");
    for (std::size_t i = 0; i < k; ++i) {
        const int j = m[i];
        if (j < 0 || static_cast<std::size_t>(j) >= k)
            throw ConfigError("swap map: index out of range");
        if (m[static_cast<std::size_t>(j)] != static_cast<int>(i))
            throw ConfigError("swap map: not an involution");
    }
}

SwapMap swap_map_from_pairs(const std::vector<std::array<int, 2>>& pairs, std::size_t k) {
    SwapMap m(k);
    for (std::size_t i = 0; i < k; ++i) m[i] = static_cast<int>(i);
    for (const auto& p : pairs) {
        if (p[0] < 0 || p[1] < 0 || static_cast<std::size_t>(p[0]) >= k ||
            static_cast<std::size_t>(p[1]) >= k)
            throw ConfigError("swap pairs: index out of range");
        m[static_cast<std::size_t>(p[0])] = p[1];
        m[static_cast<std::size_t>(p[1])] = p[0];
    }
    validate_swap_map(m, k);
    return m;
}

Box hflip_box(const Box& b) {
    Box out = b;
    out.cx = 1.0 - b.cx;
    return out;
}

KeypointSet hflip_keypoints(const KeypointSet& kps, const SwapMap& swap) {
    validate_swap_map(swap, kps.size());
    KeypointSet out;
    out.points.resize(kps.size());
    for (std::size_t i = 0; i < kps.size(); ++i) {
        Keypoint p = kps.points[static_cast<std::size_t>(swap[i])];
        if (p.visible()) p.x = 1.0 - p.x;
        out.points[i] = p;
    }
    return out;
}

}  // namespace ppose
