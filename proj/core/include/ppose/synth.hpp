#pragma once

#include <random>

#include "ppose/dataset.hpp"

namespace ppose {

// Parametric capsule-limbed skeleton: rest-pose joints in a unit template
// frame plus the limb segments drawn between them.
struct SynthTemplate {
    std::string name;
    std::vector<std::string> keypoint_names;
    std::vector<std::array<double, 2>> rest_pose;  // unit frame, [0,1]^2
    std::vector<std::array<int, 2>> skeleton;      // limb segments
    std::vector<std::array<int, 2>> swap_pairs;
};

// Built-ins: "biped" (13 keypoints), "quadruped" (12), "chair" (10).
const std::vector<SynthTemplate>& builtin_templates();
const SynthTemplate& template_by_name(const std::string& name);

struct SynthConfig {
    int width = 64;
    int height = 64;
    double min_scale = 0.28;  // figure size as a fraction of the image
    double max_scale = 0.47;
    double jitter = 0.05;       // per-joint pose noise in the template frame
    double max_overlap = 0.30;  // rejection threshold on box IoU
    int max_attempts = 100;
};

struct SynthScene {
    Image image;
    std::vector<Annotation> anns;      // category_id = template index + 1
    std::vector<int> owner;            // topmost figure per pixel, -1 = background
    std::vector<double> limb_radius;   // per figure, normalized units
};

// Renders colored capsule figures back-to-front; a keypoint covered by a
// later-drawn figure is marked invisible (per-pixel z order).
SynthScene synth_scene(std::mt19937_64& rng, int n_objects,
                       const std::vector<SynthTemplate>& templates, const SynthConfig& cfg);

struct SynthResult {
    KeypointDataset dataset;
    std::vector<Image> images;  // aligned with dataset.images
};

// n_images scenes with n_objects drawn uniformly from [min_objects,
// max_objects]; deterministic for a fixed seed.
SynthResult synth_dataset(std::uint64_t seed, int n_images, int min_objects, int max_objects,
                          const std::vector<SynthTemplate>& templates, const SynthConfig& cfg);

// Writes each image as a PPM under `dir` and points the dataset at them.
void attach_image_files(KeypointDataset& d, const std::vector<Image>& images,
                        const std::string& dir);

}  // namespace ppose
