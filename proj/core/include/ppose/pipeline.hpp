#pragma once

#include <functional>
#include <optional>

#include "ppose/losses.hpp"
#include "ppose/metrics.hpp"
#include "ppose/model.hpp"
#include "ppose/synth.hpp"

namespace ppose {

struct TrainConfig {
    long steps = 1000;
    int batch_size = 4;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double modality_prob = 0.5;  // probability of picking the visual prompt
    std::uint64_t seed = 0;
    double tau_obj = 0.3;
    bool flip_augment = true;
    bool text_only = false;  // ablation: textual prompts every step
    int log_every = 0;       // 0 = silent
    LossWeights loss;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& s);
};

// Per-keypoint OKS tolerances: the published 17 constants when a category
// matches the canonical 17-keypoint human skeleton, a uniform sigma
// otherwise.
std::vector<double> sigmas_for(const CategorySpec& cat, double uniform_sigma);

// Textual prompt covering the given categories in id order.
TextPrompt text_prompt_from_categories(const std::vector<CategorySpec>& cats,
                                       const std::string& style = "");

// Ground truths for one image against a class indexing (category id ->
// prompt row).
std::vector<GroundTruth> ground_truths_for(const KeypointDataset& data, std::int64_t image_id,
                                           const std::map<int, int>& class_of_category,
                                           double uniform_sigma);

// Single-writer training driver over an in-memory dataset. Deterministic
// for a fixed seed and single-threaded execution.
class Trainer {
  public:
    Trainer(Model& model, const TrainConfig& cfg, const KeypointDataset& data,
            std::vector<Image> images);

    // One optimizer update over a sampled batch; the modality coin decides
    // between textual and 1-shot visual prompting for the whole step.
    LossBreakdown step();
    void run(long steps, const std::function<void(long, const LossBreakdown&)>& on_log = {});

    const TrainConfig& config() const { return cfg_; }
    long steps_done() const { return steps_done_; }
    bool last_step_used_visual() const { return last_visual_; }

  private:
    PromptFeatures encode_step_prompts(nn::GraphCtx& ctx, bool visual,
                                       const std::vector<std::size_t>& batch,
                                       std::map<int, int>& class_of_category);

    Model& model_;
    TrainConfig cfg_;
    KeypointDataset data_;
    std::vector<Image> images_;
    nn::AdamW opt_;
    std::mt19937_64 rng_;
    long steps_done_ = 0;
    bool last_visual_ = false;
    std::map<int, std::vector<std::size_t>> anns_by_category_;
    std::map<std::int64_t, std::size_t> image_index_;
};

// Value-level prompt choice for inference.
struct PromptSpec {
    std::optional<TextPrompt> text;
    std::vector<VisualPrompt> visual;

    std::vector<std::string> class_names() const;
    bool empty() const { return !text.has_value() && visual.empty(); }
};

// Forward pass + thresholding; detections come back score-descending.
std::vector<Detection> run_inference(Model& model, const Image& img, const PromptSpec& spec,
                                     double tau);

// Builds a 1-shot visual prompt per category from the first annotation of
// that category in the dataset.
std::vector<VisualPrompt> visual_prompts_from_dataset(const KeypointDataset& data,
                                                      const std::vector<Image>& images,
                                                      int resolution);

enum class AlignLevel { object, keypoint };

// Mean cosine similarity between ground-truth-matched query embeddings and
// their true (textual) prompt rows, rescaled to [0,1].
double alignment_score(Model& model, const KeypointDataset& data,
                       const std::vector<Image>& images, AlignLevel level);

// Inference + metrics over a dataset with either prompt modality.
EvalReport evaluate_dataset(Model& model, const KeypointDataset& data,
                            const std::vector<Image>& images, const PromptSpec& spec, double tau,
                            std::vector<std::vector<Detection>>* out_preds = nullptr);

}  // namespace ppose
