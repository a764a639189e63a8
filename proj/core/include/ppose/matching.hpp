#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ppose/detection.hpp"

namespace ppose {

struct MatchResult {
    std::vector<std::array<int, 2>> pairs;  // (prediction, ground truth)
    std::vector<int> unmatched_preds;
};

// Optimal assignment minimizing total cost over an n_pred x n_gt matrix,
// n_pred >= n_gt; every ground truth is matched exactly once.
MatchResult hungarian(const Eigen::MatrixXd& cost);

struct CostWeights {
    double w_cls = 2.0;
    double w_l1 = 5.0;
    double w_giou = 2.0;
    double w_kpt = 5.0;
};

// cost[i][j] = w_cls * (-sigmoid obj logit for gt j's class)
//            + w_l1 * |box_i - box_j|_1 + w_giou * (1 - giou)
//            + w_kpt * mean L1 over gt-visible keypoints.
// The keypoint term applies only when the prediction decoded gt j's class
// (keypoint slots are not comparable across classes) and is skipped for
// predictions without keypoints.
Eigen::MatrixXd match_cost(const std::vector<Detection>& preds,
                           const std::vector<GroundTruth>& gts, const CostWeights& w);

}  // namespace ppose
