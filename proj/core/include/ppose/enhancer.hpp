#pragma once

#include "ppose/nn.hpp"
#include "ppose/prompts.hpp"

namespace ppose {

struct EnhancerConfig {
    int dim = 256;
    int heads = 8;
    int layers = 6;
    int points_per_level = 4;
    int ffn_hidden = 1024;
    bool use_vanilla_image_attn = false;  // ablation switch for the deformable block
    bool classwise_prompt_mask = false;   // block-diagonal prompt self-attention
};

struct EnhancedPair {
    nn::FeatureMap fmap;
    PromptFeatures prompts;
};

// Mutual refinement of image and prompt features. Each layer runs, in order:
// deformable self-attention over image tokens, vanilla self-attention over
// the joint obj+kpt prompt sequence, image-to-prompt cross-attention, and
// prompt-to-image cross-attention; every sub-block carries its own ffn,
// residual and norm. Obj/kpt rows are re-split after each layer.
class CrossModalityEnhancer {
  public:
    CrossModalityEnhancer() = default;
    CrossModalityEnhancer(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                          const EnhancerConfig& cfg, int levels);

    EnhancedPair enhance(nn::GraphCtx& ctx, const nn::FeatureMap& fmap,
                         const PromptFeatures& prompts) const;

    const EnhancerConfig& config() const { return cfg_; }

    struct Layer {
        nn::DeformableAttention img_self;
        nn::MultiHeadAttention img_self_vanilla;
        nn::FeedForward img_self_ffn;
        nn::MultiHeadAttention prompt_self;
        nn::FeedForward prompt_self_ffn;
        nn::MultiHeadAttention img_to_prompt;  // prompt queries attend to image
        nn::FeedForward img_to_prompt_ffn;
        nn::MultiHeadAttention prompt_to_img;  // image queries attend to prompts
        nn::FeedForward prompt_to_img_ffn;
    };
    const std::vector<Layer>& layers() const { return layers_; }

  private:
    EnhancerConfig cfg_;
    std::vector<Layer> layers_;
};

}  // namespace ppose
