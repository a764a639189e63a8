#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ppose/geometry.hpp"
#include "ppose/image.hpp"

namespace ppose {

struct Taxonomy {
    std::string species, family, order, cls;
    bool empty() const { return species.empty() && family.empty() && order.empty() && cls.empty(); }
};

struct CategorySpec {
    int id = 0;
    std::string name;
    std::vector<std::string> keypoint_names;
    std::vector<std::array<int, 2>> swap_pairs;  // left/right slot pairs
    bool swap_pairs_declared = false;            // field present or pairs inferred
    std::vector<std::array<int, 2>> skeleton;    // optional limb edges
    Taxonomy taxonomy;                           // optional metadata

    SwapMap swap_map() const { return swap_map_from_pairs(swap_pairs, keypoint_names.size()); }
};

struct DatasetImage {
    std::int64_t id = 0;
    std::string file_name;                  // resolved path; empty if embedded
    int width = 0, height = 0;
    std::vector<unsigned char> pixels;      // embedded RGB8, optional
};

struct Annotation {
    std::int64_t id = 0;
    std::int64_t image_id = 0;
    int category_id = 0;
    Box box;           // normalized cxcywh
    KeypointSet kpts;  // normalized coordinates
};

// The unified in-memory dataset: normalized coordinates on the snap grid;
// files carry absolute xyxy boxes.
struct KeypointDataset {
    std::string name;
    std::vector<CategorySpec> categories;
    std::vector<DatasetImage> images;
    std::vector<Annotation> annotations;

    const CategorySpec* category(int id) const;
    const DatasetImage* image(std::int64_t id) const;
    // Referential integrity plus keypoint-count checks. Throws LoadError.
    void validate() const;
};

struct ValidationIssue {
    std::string where;
    std::string message;
};
struct LoadReport {
    std::vector<ValidationIssue> issues;
};

// Reads either a plain COCO-convention file (bbox = absolute xywh) or the
// unified format written by save_dataset (bbox = absolute xyxy, tagged with
// "format"). Structural problems throw LoadError naming the record;
// value-level oddities are clamped and collected into `report`.
KeypointDataset load_dataset(const std::string& path, LoadReport* report = nullptr);

// Unified document, UTF-8 JSON, deterministic key order and float encoding.
void save_dataset(const KeypointDataset& d, const std::string& path);

// Pixels for one image record (embedded bytes or a PPM next to the file).
Image load_image(const DatasetImage& rec);

struct RenameRule {
    std::string dataset;  // empty = applies to every dataset
    std::string from, to;
};

struct RenameMap {
    std::vector<RenameRule> rules;

    // Throws UnifyError when one (dataset, from) maps to two targets.
    void validate() const;
    std::string apply(const std::string& dataset, const std::string& name) const;
    static RenameMap load(const std::string& path);
    void save(const std::string& path) const;
};

struct DatasetStats {
    struct Row {
        std::string name;
        int keypoints = 0;  // distinct keypoint names
        int classes = 0;
        std::int64_t images = 0;
        std::int64_t instances = 0;
    };
    std::vector<Row> rows;
    Row total;
};

DatasetStats compute_stats(const KeypointDataset& d);

// Renames keypoints, merges categories with identical (name, keypoint set)
// - the first-seen category's keypoint order wins and later annotations are
// permuted into it - and remaps ids collision-free.
KeypointDataset unify(const std::vector<KeypointDataset>& datasets, const RenameMap& renames,
                      DatasetStats* stats = nullptr);

// For datasets annotated in the mirrored convention: per annotation, any
// left/right slot pair whose "left" lands at larger x than its "right"
// (both visible) is swapped. Idempotent; a no-op when `flagged` is false.
KeypointDataset standardize_orientation(const KeypointDataset& d, bool flagged);

// Seeded uniform sample of n images without replacement (original image
// order preserved); annotations restricted to the kept images.
KeypointDataset sample_subset(const KeypointDataset& d, std::size_t n, std::uint64_t seed);

// Mirrors one image and its annotations using each category's swap map.
void hflip_sample(Image& img, std::vector<Annotation>& anns,
                  const std::vector<CategorySpec>& categories);

}  // namespace ppose
