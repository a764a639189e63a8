#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ppose/error.hpp"

namespace ppose {

// All geometry is in coordinates normalized to [0,1] by image width/height.
// The in-memory box format is center/size (cxcywh); files carry absolute
// corner boxes (xyxy) and conversion between the two is always explicit.

// Dataset-facing coordinates are snapped to multiples of 2^-20 of the image
// size. On that grid, mirroring (x -> 1-x) and the cxcywh<->xyxy conversions
// are exact involutions in double precision.
inline constexpr double kCoordGrid = 1048576.0;  // 2^20

double snap_coord(double x);

struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    double area() const { return w * h; }
    bool valid() const { return w > 0.0 && h > 0.0; }
};

// Corner order: x0, y0, x1, y1.
std::array<double, 4> box_to_xyxy(const Box& b);
Box box_from_xyxy(const std::array<double, 4>& c);

double box_iou(const Box& a, const Box& b);

enum class Visibility : std::uint8_t { invisible = 0, visible = 1 };

// Raw file flags: 0 = not labeled, 1 = labeled but occluded, 2 = labeled and
// visible. The encoder only distinguishes visible vs invisible, so 1 and 2
// collapse to visible.
Visibility visibility_from_raw(int raw);

struct Keypoint {
    double x = 0.0, y = 0.0;
    Visibility v = Visibility::invisible;

    bool visible() const { return v == Visibility::visible; }
};

// Ordered keypoints, index-aligned with the owning category's name list.
struct KeypointSet {
    std::vector<Keypoint> points;

    std::size_t size() const { return points.size(); }
};

// Generalized IoU in (-1, 1]. Throws DomainError on a degenerate box.
double giou(const Box& a, const Box& b);

// giou plus analytic partial derivatives w.r.t. (cx, cy, w, h) of each box.
double giou_grad(const Box& a, const Box& b, std::array<double, 4>& da,
                 std::array<double, 4>& db);

// Object keypoint similarity in [0,1], averaged over gt-visible keypoints.
// `area` is the normalized object area; `sigmas` holds one per-keypoint
// tolerance. Throws DomainError if no gt keypoint is visible.
double oks(const KeypointSet& pred, const KeypointSet& gt, double area,
           const std::vector<double>& sigmas);

// oks plus d(oks)/d(pred_i.x, pred_i.y); rows of `dpred` align with pred.
double oks_grad(const KeypointSet& pred, const KeypointSet& gt, double area,
                const std::vector<double>& sigmas,
                std::vector<std::array<double, 2>>& dpred);

// Per-keypoint tolerances for the 17-point COCO skeleton.
const std::vector<double>& coco_sigmas();
std::vector<double> uniform_sigmas(std::size_t k, double sigma = 0.1);

// [sin(s*2^b*x), cos(s*2^b*x), sin(s*2^b*y), cos(s*2^b*y)] for b = 0..B-1.
std::vector<double> fourier_embed(double x, double y, int bands, double scale);

// Index permutation pairing left/right keypoint slots. Must be an involution.
using SwapMap = std::vector<int>;

// Throws ConfigError unless `m` is an involutive permutation of size k.
void validate_swap_map(const SwapMap& m, std::size_t k);
SwapMap swap_map_from_pairs(const std::vector<std::array<int, 2>>& pairs, std::size_t k);

// Mirror about the vertical axis. Keypoint slots are permuted by the swap
// map so that "left ..." names keep naming the image-left side.
Box hflip_box(const Box& b);
KeypointSet hflip_keypoints(const KeypointSet& kps, const SwapMap& swap);

}  // namespace ppose
