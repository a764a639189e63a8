#pragma once

#include <memory>

#include "ppose/dataset.hpp"
#include "ppose/decoders.hpp"
#include "ppose/detection.hpp"
#include "ppose/enhancer.hpp"
#include "ppose/matching.hpp"
#include "ppose/prompts.hpp"

namespace ppose {

struct ModelConfig {
    int dim = 256;
    int heads = 8;
    int enhancer_layers = 6;
    int obj_decoder_layers = 2;
    int kpt_decoder_layers = 4;
    int num_queries = 100;
    int points_per_level = 4;
    int ffn_mult = 4;
    std::vector<int> strides = {8, 16, 32};
    int fourier_bands = 8;
    double fourier_scale = 2.0 * 3.14159265358979323846;
    int prompt_resolution = 224;
    int prompt_patch = 16;
    int text_layers = 2;
    int vp_layers = 4;
    int max_text_len = 16;
    double anchor_base = 0.05;
    double uniform_sigma = 0.1;
    bool use_vanilla_image_attn = false;
    bool classwise_prompt_mask = false;
    bool kpt_align_slice_only = false;

    int ffn_hidden() const { return dim * ffn_mult; }
    std::string to_json() const;
    static ModelConfig from_json(const std::string& s);
};

// The full promptable detector: patchified multi-scale backbone, prompt
// encoders, cross-modality enhancer, prompt-guided query selection, and the
// decoupled object/keypoint decoders with contrastive classification heads.
class Model {
  public:
    Model(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t init_seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return *vocab_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    nn::FeatureMap embed_image(nn::GraphCtx& ctx, const Image& img) const;
    PromptFeatures encode_text(nn::GraphCtx& ctx, const TextPrompt& p) const;
    PromptFeatures encode_visual(nn::GraphCtx& ctx, const VisualPrompt& p) const;
    PromptFeatures encode_visuals(nn::GraphCtx& ctx, const std::vector<VisualPrompt>& ps) const;

    struct Forward {
        EnhancedPair enhanced;
        ObjectDecodeResult objects;
        std::vector<nn::Var> obj_layer_logits;  // per object-decoder layer
        KeypointDecodeResult kpts;
        std::vector<nn::Var> kpt_layer_logits;  // per keypoint-decoder layer
        std::vector<int> object_rows;           // slots that own keypoint groups
        std::vector<int> class_of;              // prompt class per such slot
        MatchResult preliminary;                // training only
    };

    // Training pass: every object slot owns a keypoint group; slot classes
    // come from a preliminary box+class matching against the ground truth
    // (the matched class where available, the argmax class otherwise).
    Forward forward_train(nn::GraphCtx& ctx, const Image& img, const PromptFeatures& prompts,
                          const std::vector<GroundTruth>& gts, const CostWeights& w) const;

    // Inference pass: keypoints are decoded only for objects whose best
    // sigmoid logit reaches tau, each under its argmax class.
    Forward forward_infer(nn::GraphCtx& ctx, const Image& img, const PromptFeatures& prompts,
                          double tau) const;

    // Detections (score-descending) from an inference pass.
    std::vector<Detection> to_detections(nn::GraphCtx& ctx, const Forward& f) const;

    const ClassifyHead& obj_head() const { return obj_classify_; }
    const ClassifyHead& kpt_head() const { return kpt_classify_; }
    const TextEncoder& text_encoder() const { return text_; }

  private:
    Forward forward_common(nn::GraphCtx& ctx, const Image& img, const PromptFeatures& prompts,
                           Forward& f) const;

    ModelConfig cfg_;
    std::unique_ptr<Vocabulary> vocab_;
    nn::ParamStore params_;

    std::vector<std::string> level_proj_;  // per-level param prefixes
    std::string level_embed_name_, backbone_pos_name_;
    std::vector<nn::LayerNorm> level_norm_;
    TextEncoder text_;
    VisualPromptEncoder visual_;
    CrossModalityEnhancer enhancer_;
    QuerySelector selector_;
    ObjectDecoder obj_decoder_;
    KeypointDecoder kpt_decoder_;
    ClassifyHead obj_classify_, kpt_classify_;
};

// Versioned checkpoint: config snapshot, vocabulary, the categories the
// model was trained on, and every parameter tensor.
void save_checkpoint(const Model& model, const std::vector<CategorySpec>& categories,
                     const std::string& path);

struct Checkpoint {
    std::unique_ptr<Model> model;
    std::vector<CategorySpec> categories;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ppose
