#pragma once

#include "ppose/detection.hpp"

namespace ppose {

// Fraction of gt-visible keypoints predicted within t * max(box_w, box_h)
// of their ground truth (<= rule). Predictions are greedily matched to
// same-class ground truths by box IoU (threshold 0.5), best score first.
// Throws DomainError when no ground-truth keypoint is visible.
double evaluate_pck(const std::vector<std::vector<Detection>>& preds,
                    const std::vector<std::vector<GroundTruth>>& gts, double t = 0.2);

struct ApResult {
    double ap = 0.0;
    std::vector<std::array<double, 2>> per_threshold;  // (oks threshold, ap)
};

// COCO-style keypoint average precision: per category, detections sorted by
// score are greedily matched to the best remaining gt by OKS at thresholds
// 0.50:0.05:0.95; precision is interpolated at 101 recall points and
// averaged over thresholds, then over categories present in the gt.
ApResult evaluate_ap(const std::vector<std::vector<Detection>>& preds,
                     const std::vector<std::vector<GroundTruth>>& gts);

struct EvalReport {
    double pck = 0.0;
    double ap = 0.0;
    std::vector<std::array<double, 2>> ap_per_threshold;
    double align_obj = 0.0;
    double align_kpt = 0.0;
};

}  // namespace ppose
