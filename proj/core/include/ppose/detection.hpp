#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ppose/geometry.hpp"

namespace ppose {

// One detected object: class logits against the prompt's classes, its box,
// and the decoded keypoints for its assigned class.
struct Detection {
    std::vector<double> obj_logits;  // length L (prompt classes)
    double score = 0.0;              // max sigmoid logit
    int cls = -1;                    // argmax class
    Box box;
    KeypointSet kpts;
    Eigen::MatrixXd kpt_logits;  // K x K_total, empty when not requested
};

// A ground-truth instance expressed against the same prompt class indexing.
struct GroundTruth {
    int cls = -1;
    Box box;
    KeypointSet kpts;
    std::vector<double> sigmas;  // per-keypoint OKS tolerances
};

}  // namespace ppose
