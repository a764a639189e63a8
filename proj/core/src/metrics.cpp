#include "ppose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace ppose {

namespace {

struct Match {
    const Detection* pred;
    const GroundTruth* gt;
};

// Greedy same-class box-IoU matching within one image, best score first.
std::vector<Match> greedy_iou_match(const std::vector<Detection>& preds,
                                    const std::vector<GroundTruth>& gts, double iou_thr) {
    std::vector<const Detection*> order;
    for (const auto& p : preds) order.push_back(&p);
    std::stable_sort(order.begin(), order.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });
    std::vector<char> taken(gts.size(), 0);
    std::vector<Match> out;
    for (const Detection* p : order) {
        int best = -1;
        double best_iou = iou_thr;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[j] || gts[j].cls != p->cls) continue;
            const double iou = box_iou(p->box, gts[j].box);
            if (iou >= best_iou) {
                best_iou = iou;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0) {
            taken[static_cast<std::size_t>(best)] = 1;
            out.push_back({p, &gts[static_cast<std::size_t>(best)]});
        }
    }
    return out;
}

}  // namespace

double evaluate_pck(const std::vector<std::vector<Detection>>& preds,
                    const std::vector<std::vector<GroundTruth>>& gts, double t) {
    if (preds.size() != gts.size()) throw ValidationError("evaluate_pck: image count mismatch");
    long total_visible = 0, correct = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        for (const auto& g : gts[i])
            for (const auto& p : g.kpts.points) total_visible += p.visible();
        for (const Match& m : greedy_iou_match(preds[i], gts[i], 0.5)) {
            if (m.pred->kpts.size() != m.gt->kpts.size()) continue;
            const double thr = t * std::max(m.gt->box.w, m.gt->box.h);
            for (std::size_t k = 0; k < m.gt->kpts.size(); ++k) {
                const Keypoint& gk = m.gt->kpts.points[k];
                if (!gk.visible()) continue;
                const Keypoint& pk = m.pred->kpts.points[k];
                const double d = std::hypot(pk.x - gk.x, pk.y - gk.y);
                if (d <= thr) ++correct;
            }
        }
    }
    if (total_visible == 0) throw DomainError("evaluate_pck: no visible ground-truth keypoints");
    return static_cast<double>(correct) / static_cast<double>(total_visible);
}

namespace {

struct ScoredDet {
    double score;
    std::size_t image;
    const Detection* det;
};

double ap_for_category(const std::vector<std::vector<Detection>>& preds,
                       const std::vector<std::vector<GroundTruth>>& gts, int cls, double oks_thr) {
    // Collect detections of this class over all images, score-descending.
    std::vector<ScoredDet> dets;
    long n_gt = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (const auto& d : preds[i])
            if (d.cls == cls) dets.push_back({d.score, i, &d});
        for (const auto& g : gts[i]) n_gt += g.cls == cls;
    }
    if (n_gt == 0) return 0.0;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const ScoredDet& a, const ScoredDet& b) { return a.score > b.score; });

    std::map<std::pair<std::size_t, const GroundTruth*>, char> taken;
    std::vector<char> tp(dets.size(), 0);
    for (std::size_t d = 0; d < dets.size(); ++d) {
        const Detection& det = *dets[d].det;
        double best = oks_thr;
        const GroundTruth* best_gt = nullptr;
        for (const auto& g : gts[dets[d].image]) {
            if (g.cls != cls || taken.count({dets[d].image, &g})) continue;
            bool any_visible = false;
            for (const auto& p : g.kpts.points) any_visible = any_visible || p.visible();
            if (!any_visible || det.kpts.size() != g.kpts.size()) continue;
            const double s = oks(det.kpts, g.kpts, g.box.area(), g.sigmas);
            if (s >= best) {
                best = s;
                best_gt = &g;
            }
        }
        if (best_gt) {
            taken[{dets[d].image, best_gt}] = 1;
            tp[d] = 1;
        }
    }

    // 101-point interpolated precision over recall.
    std::vector<double> precision, recall;
    long tp_acc = 0;
    for (std::size_t d = 0; d < dets.size(); ++d) {
        tp_acc += tp[d];
        precision.push_back(static_cast<double>(tp_acc) / static_cast<double>(d + 1));
        recall.push_back(static_cast<double>(tp_acc) / static_cast<double>(n_gt));
    }
    // Monotone non-increasing envelope from the right.
    for (int d = static_cast<int>(precision.size()) - 2; d >= 0; --d)
        precision[static_cast<std::size_t>(d)] =
            std::max(precision[static_cast<std::size_t>(d)], precision[static_cast<std::size_t>(d) + 1]);

    double ap = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double target = r / 100.0;
        double p = 0.0;
        for (std::size_t d = 0; d < recall.size(); ++d)
            if (recall[d] >= target) {
                p = precision[d];
                break;
            }
        ap += p;
    }
    return ap / 101.0;
}

}  // namespace

ApResult evaluate_ap(const std::vector<std::vector<Detection>>& preds,
                     const std::vector<std::vector<GroundTruth>>& gts) {
    if (preds.size() != gts.size()) throw ValidationError("evaluate_ap: image count mismatch");
    std::set<int> classes;
    for (const auto& img : gts)
        for (const auto& g : img) classes.insert(g.cls);

    ApResult res;
    if (classes.empty()) return res;
    for (int thr_i = 0; thr_i < 10; ++thr_i) {
        const double thr = 0.5 + 0.05 * thr_i;
        double acc = 0.0;
        for (int cls : classes) acc += ap_for_category(preds, gts, cls, thr);
        res.per_threshold.push_back({thr, acc / static_cast<double>(classes.size())});
    }
    for (const auto& [thr, ap] : res.per_threshold) res.ap += ap;
    res.ap /= static_cast<double>(res.per_threshold.size());
    return res;
}

}  // namespace ppose
