#pragma once

#include <string>
#include <vector>

#include "ppose/geometry.hpp"
#include "ppose/image.hpp"
#include "ppose/nn.hpp"
#include "ppose/text.hpp"

namespace ppose {

// Object-level (L x C) and keypoint-level (K_total x C) prompt embeddings
// with per-class slices into the keypoint rows. Produced by either modality
// and consumed identically downstream.
struct PromptFeatures {
    nn::Var obj;
    nn::Var kpt;
    std::vector<std::array<int, 2>> slices;  // [begin, end) per class

    int num_classes() const { return static_cast<int>(slices.size()); }
    int kpt_count(int cls) const {
        return slices[static_cast<std::size_t>(cls)][1] - slices[static_cast<std::size_t>(cls)][0];
    }
    int total_keypoints() const { return slices.empty() ? 0 : slices.back()[1]; }
};

struct TextEncoderConfig {
    int dim = 256;
    int heads = 8;
    int layers = 2;
    int max_len = 16;
    int ffn_hidden = 1024;
};

// Small from-scratch text tower: learned token + position embeddings, a few
// post-norm transformer blocks, pooled at the <eos> token. Deterministic for
// fixed parameters, so identical strings always share one embedding.
class TextEncoder {
  public:
    TextEncoder() = default;
    TextEncoder(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                const Vocabulary& vocab, const TextEncoderConfig& cfg);

    // One pooled C-vector per input string, stacked in order.
    nn::Var encode_strings(nn::GraphCtx& ctx, const std::vector<std::string>& strings) const;

    PromptFeatures encode(nn::GraphCtx& ctx, const TextPrompt& prompt) const;

    const TextEncoderConfig& config() const { return cfg_; }

  private:
    TextEncoderConfig cfg_;
    const Vocabulary* vocab_ = nullptr;
    std::string embed_name_, pos_name_;
    std::vector<nn::MultiHeadAttention> attn_;
    std::vector<nn::FeedForward> ffn_;
};

// One exemplar image with its keypoint definitions (1-shot).
struct VisualPrompt {
    Image image;  // already at the prompt resolution
    KeypointSet keypoints;
    std::vector<std::string> keypoint_names;
    std::string object_name;
};

struct VisualEncoderConfig {
    int dim = 256;
    int heads = 8;
    int layers = 4;
    int resolution = 224;
    int patch = 16;
    int fourier_bands = 8;
    double fourier_scale = 2.0 * 3.14159265358979323846;
    int ffn_hidden = 1024;
};

// ViT-style patch tower extended with keypoint tokens: visible keypoints
// start from a projected Fourier embedding of their position, invisible ones
// from one shared learnable mask token; each block runs keypoint-to-keypoint
// self-attention followed by patch-to-keypoint cross-attention.
class VisualPromptEncoder {
  public:
    VisualPromptEncoder() = default;
    VisualPromptEncoder(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                        const VisualEncoderConfig& cfg);

    // L = 1; kpt rows follow the prompt's keypoint order.
    PromptFeatures encode(nn::GraphCtx& ctx, const VisualPrompt& prompt) const;

    const VisualEncoderConfig& config() const { return cfg_; }

  private:
    VisualEncoderConfig cfg_;
    std::string patch_name_, patch_pos_name_, fourier_name_, fourier_bias_name_, mask_name_;
    std::vector<nn::MultiHeadAttention> patch_attn_, k2k_attn_, p2k_attn_;
    std::vector<nn::FeedForward> patch_ffn_, kpt_ffn_;
};

// Merges single-class prompt features (one per category) into one feature
// set; row order follows the argument order.
PromptFeatures concat_prompts(nn::GraphCtx& ctx, const std::vector<PromptFeatures>& parts);

// Square crop around `box` with a relative margin, resized to `resolution`,
// keypoints remapped into crop coordinates (visible ones must land in the
// crop; callers pass boxes that contain their keypoints).
VisualPrompt make_visual_prompt(const Image& img, const Box& box, const KeypointSet& kps,
                                const std::vector<std::string>& keypoint_names,
                                const std::string& object_name, int resolution,
                                double margin = 0.1);

}  // namespace ppose
