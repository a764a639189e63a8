#include "ppose/matching.hpp"

#include <cmath>
#include <limits>

namespace ppose {

MatchResult hungarian(const Eigen::MatrixXd& cost) {
    const int n_pred = static_cast<int>(cost.rows());
    const int n_gt = static_cast<int>(cost.cols());
    if (n_pred < n_gt) throw ValidationError("hungarian: fewer predictions than ground truths");
    if (!cost.allFinite()) throw ValidationError("hungarian: costs must be finite");

    MatchResult out;
    if (n_gt == 0) {
        for (int i = 0; i < n_pred; ++i) out.unmatched_preds.push_back(i);
        return out;
    }

    // Potential-based assignment over rows = ground truths (n_gt <= n_pred).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n_gt) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n_pred) + 1, 0.0);
    std::vector<int> assignment(static_cast<std::size_t>(n_pred) + 1, 0);  // pred -> gt
    std::vector<int> way(static_cast<std::size_t>(n_pred) + 1, 0);

    for (int i = 1; i <= n_gt; ++i) {
        assignment[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n_pred) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n_pred) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = assignment[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = -1;
            for (int j = 1; j <= n_pred; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(j - 1, i0 - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n_pred; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(assignment[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (assignment[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            assignment[static_cast<std::size_t>(j0)] = assignment[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<char> matched(static_cast<std::size_t>(n_pred), 0);
    for (int j = 1; j <= n_pred; ++j) {
        const int gt = assignment[static_cast<std::size_t>(j)];
        if (gt != 0) {
            out.pairs.push_back({j - 1, gt - 1});
            matched[static_cast<std::size_t>(j - 1)] = 1;
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const auto& a, const auto& b) { return a[1] < b[1]; });
    for (int i = 0; i < n_pred; ++i)
        if (!matched[static_cast<std::size_t>(i)]) out.unmatched_preds.push_back(i);
    return out;
}

Eigen::MatrixXd match_cost(const std::vector<Detection>& preds,
                           const std::vector<GroundTruth>& gts, const CostWeights& w) {
    if (w.w_cls < 0 || w.w_l1 < 0 || w.w_giou < 0 || w.w_kpt < 0)
        throw ValidationError("match_cost: weights must be nonnegative");
    Eigen::MatrixXd cost(static_cast<Eigen::Index>(preds.size()),
                         static_cast<Eigen::Index>(gts.size()));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Detection& p = preds[i];
        for (std::size_t j = 0; j < gts.size(); ++j) {
            const GroundTruth& g = gts[j];
            double c = 0.0;
            if (w.w_cls > 0 && g.cls >= 0 && g.cls < static_cast<int>(p.obj_logits.size()))
                c -= w.w_cls / (1.0 + std::exp(-p.obj_logits[static_cast<std::size_t>(g.cls)]));
            c += w.w_l1 * (std::abs(p.box.cx - g.box.cx) + std::abs(p.box.cy - g.box.cy) +
                           std::abs(p.box.w - g.box.w) + std::abs(p.box.h - g.box.h));
            c += w.w_giou * (1.0 - giou(p.box, g.box));
            if (w.w_kpt > 0 && !p.kpts.points.empty() && p.cls == g.cls &&
                p.kpts.size() == g.kpts.size()) {
                double l1 = 0.0;
                int vis = 0;
                for (std::size_t k = 0; k < g.kpts.size(); ++k) {
                    if (!g.kpts.points[k].visible()) continue;
                    ++vis;
                    l1 += std::abs(p.kpts.points[k].x - g.kpts.points[k].x) +
                          std::abs(p.kpts.points[k].y - g.kpts.points[k].y);
                }
                if (vis > 0) c += w.w_kpt * l1 / vis;
            }
            cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c;
        }
    }
    return cost;
}

}  // namespace ppose
