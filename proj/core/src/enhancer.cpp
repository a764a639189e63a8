#include "ppose/enhancer.hpp"

namespace ppose {

using nn::GraphCtx;
using nn::MaskMat;
using nn::TokenSequence;
using nn::Var;

CrossModalityEnhancer::CrossModalityEnhancer(nn::ParamStore& s, std::mt19937_64& rng,
                                             const std::string& prefix, const EnhancerConfig& cfg,
                                             int levels)
    : cfg_(cfg) {
    if (cfg.layers < 1) throw ConfigError("enhancer: layers must be >= 1");
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        Layer layer;
        if (cfg.use_vanilla_image_attn)
            layer.img_self_vanilla =
                nn::MultiHeadAttention(s, rng, lp + ".img_self", cfg.dim, cfg.heads);
        else
            layer.img_self = nn::DeformableAttention(s, rng, lp + ".img_self", cfg.dim, cfg.heads,
                                                     levels, cfg.points_per_level);
        layer.img_self_ffn = nn::FeedForward(s, rng, lp + ".img_self_ffn", cfg.dim, cfg.ffn_hidden);
        layer.prompt_self = nn::MultiHeadAttention(s, rng, lp + ".prompt_self", cfg.dim, cfg.heads);
        layer.prompt_self_ffn =
            nn::FeedForward(s, rng, lp + ".prompt_self_ffn", cfg.dim, cfg.ffn_hidden);
        layer.img_to_prompt =
            nn::MultiHeadAttention(s, rng, lp + ".img_to_prompt", cfg.dim, cfg.heads);
        layer.img_to_prompt_ffn =
            nn::FeedForward(s, rng, lp + ".img_to_prompt_ffn", cfg.dim, cfg.ffn_hidden);
        layer.prompt_to_img =
            nn::MultiHeadAttention(s, rng, lp + ".prompt_to_img", cfg.dim, cfg.heads);
        layer.prompt_to_img_ffn =
            nn::FeedForward(s, rng, lp + ".prompt_to_img_ffn", cfg.dim, cfg.ffn_hidden);
        layers_.push_back(std::move(layer));
    }
}

EnhancedPair CrossModalityEnhancer::enhance(GraphCtx& ctx, const nn::FeatureMap& fmap,
                                            const PromptFeatures& prompts) const {
    auto& t = ctx.tape();
    const int n_obj = static_cast<int>(t.val(prompts.obj).rows());
    const int n_kpt = static_cast<int>(t.val(prompts.kpt).rows());
    const int n_prompt = n_obj + n_kpt;

    // Optional block-diagonal mask keeping each class with its own rows.
    MaskMat prompt_mask;
    if (cfg_.classwise_prompt_mask) {
        prompt_mask = MaskMat::Zero(n_prompt, n_prompt);
        for (int c = 0; c < prompts.num_classes(); ++c) {
            std::vector<int> rows = {c};
            const auto& s = prompts.slices[static_cast<std::size_t>(c)];
            for (int k = s[0]; k < s[1]; ++k) rows.push_back(n_obj + k);
            for (int a : rows)
                for (int b : rows) prompt_mask(a, b) = 1;
        }
    }

    Var img = fmap.tokens;
    Var prompt_seq = t.concat_rows({prompts.obj, prompts.kpt});

    for (const Layer& layer : layers_) {
        // 1) image self-attention (deformable over the pyramid by default)
        if (cfg_.use_vanilla_image_attn) {
            TokenSequence is{img, {}};
            img = layer.img_self_vanilla.forward(ctx, is, is);
        } else {
            nn::FeatureMap cur{img, fmap.geo};
            img = layer.img_self.forward(ctx, img, fmap.geo.positions, cur);
        }
        img = layer.img_self_ffn.forward(ctx, img);

        // 2) prompt self-attention over the joint obj+kpt sequence
        TokenSequence ps{prompt_seq, {}};
        prompt_seq = layer.prompt_self.forward(ctx, ps, ps,
                                               prompt_mask.size() ? &prompt_mask : nullptr);
        prompt_seq = layer.prompt_self_ffn.forward(ctx, prompt_seq);

        // 3) image-to-prompt: prompt queries read image tokens
        TokenSequence pq{prompt_seq, {}};
        TokenSequence iv{img, {}};
        prompt_seq = layer.img_to_prompt.forward(ctx, pq, iv);
        prompt_seq = layer.img_to_prompt_ffn.forward(ctx, prompt_seq);

        // 4) prompt-to-image: image queries read prompt rows
        TokenSequence iq{img, {}};
        TokenSequence pv{prompt_seq, {}};
        img = layer.prompt_to_img.forward(ctx, iq, pv);
        img = layer.prompt_to_img_ffn.forward(ctx, img);
    }

    EnhancedPair out;
    out.fmap = nn::FeatureMap{img, fmap.geo};
    out.prompts.obj = t.slice_rows(prompt_seq, 0, n_obj);
    out.prompts.kpt = t.slice_rows(prompt_seq, n_obj, n_kpt);
    out.prompts.slices = prompts.slices;
    return out;
}

}  // namespace ppose
