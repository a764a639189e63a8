#pragma once

#include "ppose/matching.hpp"
#include "ppose/nn.hpp"
#include "ppose/prompts.hpp"

namespace ppose {

struct LossWeights {
    double w_cls = 2.0;
    double w_l1 = 5.0;
    double w_giou = 2.0;
    double w_kpt_l1 = 5.0;
    double w_oks = 2.0;
    double alpha = 0.25;
    double gamma = 2.0;
    // When set, a keypoint query contrasts only against its own class's
    // keypoint rows; otherwise against the full keypoint row set.
    bool kpt_align_slice_only = false;

    CostWeights cost() const { return {w_cls, w_l1, w_giou, w_kpt_l1}; }
};

struct LossBreakdown {
    double reg_obj = 0.0;
    double reg_kpt = 0.0;
    double align_obj = 0.0;
    double align_kpt = 0.0;
    double total = 0.0;
};

// Pointwise focal loss on a probability. Probabilities are clamped to
// [1e-8, 1 - 1e-8].
double focal_loss(double p, int target, double alpha, double gamma);
double focal_loss_grad(double p, int target, double alpha, double gamma);  // d/dp

// Tape node: sigmoid focal loss over a logit matrix. `targets` holds 0/1;
// entries with include == 0 (when given) are left out entirely. The sum is
// divided by `normalizer`.
nn::Var focal_loss_node(nn::Tape& t, nn::Var logits, const nn::MaskMat& targets, double alpha,
                        double gamma, double normalizer, const nn::MaskMat* include = nullptr);

// Tape nodes for the regression terms; `rows` selects prediction rows.
nn::Var box_l1_node(nn::Tape& t, nn::Var boxes, const std::vector<int>& rows,
                    const std::vector<Box>& targets, double normalizer);
nn::Var box_giou_node(nn::Tape& t, nn::Var boxes, const std::vector<int>& rows,
                      const std::vector<Box>& targets, double normalizer);
nn::Var kpt_l1_node(nn::Tape& t, nn::Var coords, const std::vector<int>& rows,
                    const std::vector<std::array<double, 2>>& targets, double normalizer);

struct OksTarget {
    int row_begin = 0;  // first coordinate row of the object's keypoint group
    KeypointSet gt;
    std::vector<double> sigmas;
    double area = 0.0;
};
nn::Var oks_node(nn::Tape& t, nn::Var coords, const std::vector<OksTarget>& targets,
                 double normalizer);

// Per-decoder-layer object predictions living on the tape.
struct ObjLayerPreds {
    nn::Var boxes;   // N x 4 (cxcywh)
    nn::Var logits;  // N x L
};
// Per-decoder-layer keypoint predictions; group structure is shared.
struct KptLayerPreds {
    nn::Var coords;  // (sum K) x 2
    nn::Var logits;  // (sum K) x K_total
};

struct TotalLossInputs {
    std::vector<ObjLayerPreds> obj_layers;
    std::vector<KptLayerPreds> kpt_layers;
    // Keypoint group structure: one entry per object slot.
    std::vector<std::array<int, 2>> groups;  // rows [begin, end) per object
    std::vector<int> class_of;               // decoded class per object slot
    std::vector<std::array<int, 2>> slices;  // prompt keypoint slices per class
    std::vector<GroundTruth> gts;
    LossWeights weights;
    // When set, every layer uses this assignment instead of re-matching.
    const MatchResult* frozen_matching = nullptr;
};

struct TotalLossResult {
    LossBreakdown breakdown;
    nn::Var total;                           // scalar on the tape
    std::vector<MatchResult> obj_matchings;  // one per object layer
    MatchResult final_matching;
};

// Deep-supervised set-prediction loss: each object layer is matched
// independently (assignments are constants to the gradient); keypoint terms
// use the final object layer's assignment. Terms are averaged over their
// decoder's layers and summed into the total.
TotalLossResult total_loss(nn::GraphCtx& ctx, const TotalLossInputs& in);

}  // namespace ppose
