#include "ppose/prompts.hpp"

#include <cmath>

namespace ppose {

using nn::GraphCtx;
using nn::Mat;
using nn::TokenSequence;
using nn::Var;

TextEncoder::TextEncoder(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                         const Vocabulary& vocab, const TextEncoderConfig& cfg)
    : cfg_(cfg), vocab_(&vocab), embed_name_(prefix + ".embed"), pos_name_(prefix + ".pos") {
    Mat& emb = s.create(embed_name_, vocab.size(), cfg.dim);
    nn::init_normal(emb, rng, 0.02);
    Mat& pos = s.create(pos_name_, cfg.max_len, cfg.dim);
    nn::init_normal(pos, rng, 0.02);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        attn_.emplace_back(s, rng, lp + ".attn", cfg.dim, cfg.heads);
        ffn_.emplace_back(s, rng, lp + ".ffn", cfg.dim, cfg.ffn_hidden);
    }
}

Var TextEncoder::encode_strings(GraphCtx& ctx, const std::vector<std::string>& strings) const {
    auto& t = ctx.tape();
    Var emb = ctx.p(embed_name_);
    Var pos = ctx.p(pos_name_);
    std::vector<Var> pooled;
    pooled.reserve(strings.size());
    for (const auto& s : strings) {
        const std::vector<int> ids = vocab_->encode(s, cfg_.max_len);
        const int n = static_cast<int>(ids.size());
        Var x = t.add(t.gather_rows(emb, ids), t.slice_rows(pos, 0, n));
        for (std::size_t l = 0; l < attn_.size(); ++l) {
            TokenSequence seq{x, {}};
            x = attn_[l].forward(ctx, seq, seq);
            x = ffn_[l].forward(ctx, x);
        }
        pooled.push_back(t.slice_rows(x, n - 1, 1));  // <eos> row
    }
    return pooled.size() == 1 ? pooled[0] : t.concat_rows(pooled);
}

PromptFeatures TextEncoder::encode(GraphCtx& ctx, const TextPrompt& prompt) const {
    prompt.validate();
    std::vector<std::string> obj_strings, kpt_strings;
    PromptFeatures out;
    int offset = 0;
    for (const auto& cls : prompt.classes) {
        obj_strings.push_back(render_template(prompt.style, cls.object_name));
        for (std::size_t i = 0; i < cls.keypoint_names.size(); ++i) {
            const std::string part = cls.keypoint_parts.empty() ? "" : cls.keypoint_parts[i];
            kpt_strings.push_back(render_keypoint_string(prompt.style, cls.keypoint_names[i], part));
        }
        const int k = static_cast<int>(cls.keypoint_names.size());
        out.slices.push_back({offset, offset + k});
        offset += k;
    }
    out.obj = encode_strings(ctx, obj_strings);
    out.kpt = encode_strings(ctx, kpt_strings);
    return out;
}

VisualPromptEncoder::VisualPromptEncoder(nn::ParamStore& s, std::mt19937_64& rng,
                                         const std::string& prefix,
                                         const VisualEncoderConfig& cfg)
    : cfg_(cfg),
      patch_name_(prefix + ".patch"),
      patch_pos_name_(prefix + ".patch_pos"),
      fourier_name_(prefix + ".fourier.W"),
      fourier_bias_name_(prefix + ".fourier.b"),
      mask_name_(prefix + ".mask_token") {
    if (cfg.resolution % cfg.patch != 0)
        throw ConfigError("visual prompt encoder: resolution must be a patch multiple");
    const int grid = cfg.resolution / cfg.patch;
    const int patch_dim = cfg.patch * cfg.patch * 3;
    Mat& pw = s.create(patch_name_ + ".W", patch_dim, cfg.dim);
    nn::init_xavier(pw, rng);
    s.create(patch_name_ + ".b", 1, cfg.dim);
    Mat& pos = s.create(patch_pos_name_, grid * grid, cfg.dim);
    nn::init_normal(pos, rng, 0.02);
    Mat& fw = s.create(fourier_name_, 4 * cfg.fourier_bands, cfg.dim);
    nn::init_xavier(fw, rng);
    s.create(fourier_bias_name_, 1, cfg.dim);
    Mat& mask = s.create(mask_name_, 1, cfg.dim);
    nn::init_normal(mask, rng, 0.02);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        patch_attn_.emplace_back(s, rng, lp + ".patch_attn", cfg.dim, cfg.heads);
        patch_ffn_.emplace_back(s, rng, lp + ".patch_ffn", cfg.dim, cfg.ffn_hidden);
        k2k_attn_.emplace_back(s, rng, lp + ".k2k", cfg.dim, cfg.heads);
        p2k_attn_.emplace_back(s, rng, lp + ".p2k", cfg.dim, cfg.heads);
        kpt_ffn_.emplace_back(s, rng, lp + ".kpt_ffn", cfg.dim, cfg.ffn_hidden);
    }
}

PromptFeatures VisualPromptEncoder::encode(GraphCtx& ctx, const VisualPrompt& prompt) const {
    auto& t = ctx.tape();
    if (prompt.image.width != cfg_.resolution || prompt.image.height != cfg_.resolution)
        throw ValidationError("visual prompt: image must be at the prompt resolution");
    if (prompt.keypoints.size() != prompt.keypoint_names.size())
        throw ValidationError("visual prompt: keypoints/names length mismatch");
    for (const auto& p : prompt.keypoints.points)
        if (p.visible() && (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0))
            throw ValidationError("visual prompt: visible keypoint outside [0,1]^2");

    // Patch tokens.
    const int grid = cfg_.resolution / cfg_.patch;
    const int patch_dim = cfg_.patch * cfg_.patch * 3;
    Mat patches(grid * grid, patch_dim);
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            int col = 0;
            for (int py = 0; py < cfg_.patch; ++py)
                for (int px = 0; px < cfg_.patch; ++px)
                    for (int c = 0; c < 3; ++c)
                        patches(gy * grid + gx, col++) =
                            prompt.image.at(gx * cfg_.patch + px, gy * cfg_.patch + py, c);
        }
    Var pt = t.add_row_broadcast(t.matmul(t.constant(std::move(patches)), ctx.p(patch_name_ + ".W")),
                                 ctx.p(patch_name_ + ".b"));
    pt = t.add(pt, ctx.p(patch_pos_name_));

    // Keypoint tokens: Fourier position for visible, shared mask token for
    // invisible. Invisible coordinates are never read.
    const int k = static_cast<int>(prompt.keypoints.size());
    std::vector<Var> kpt_rows;
    kpt_rows.reserve(static_cast<std::size_t>(k));
    Var fw = ctx.p(fourier_name_);
    Var fb = ctx.p(fourier_bias_name_);
    Var mask_token = ctx.p(mask_name_);
    for (int i = 0; i < k; ++i) {
        const Keypoint& p = prompt.keypoints.points[static_cast<std::size_t>(i)];
        if (p.visible()) {
            const auto emb = fourier_embed(p.x, p.y, cfg_.fourier_bands, cfg_.fourier_scale);
            Mat row(1, static_cast<int>(emb.size()));
            for (std::size_t j = 0; j < emb.size(); ++j) row(0, static_cast<int>(j)) = emb[j];
            kpt_rows.push_back(
                t.add_row_broadcast(t.matmul(t.constant(std::move(row)), fw), fb));
        } else {
            kpt_rows.push_back(mask_token);
        }
    }
    Var kt = k == 1 ? kpt_rows[0] : t.concat_rows(kpt_rows);

    for (std::size_t l = 0; l < k2k_attn_.size(); ++l) {
        TokenSequence ps{pt, {}};
        pt = patch_attn_[l].forward(ctx, ps, ps);
        pt = patch_ffn_[l].forward(ctx, pt);
        TokenSequence ks{kt, {}};
        kt = k2k_attn_[l].forward(ctx, ks, ks);
        TokenSequence ks2{kt, {}};
        TokenSequence pv{pt, {}};
        kt = p2k_attn_[l].forward(ctx, ks2, pv);
        kt = kpt_ffn_[l].forward(ctx, kt);
    }

    PromptFeatures out;
    out.obj = t.mean_rows(pt);
    out.kpt = kt;
    out.slices = {{0, k}};
    return out;
}

PromptFeatures concat_prompts(GraphCtx& ctx, const std::vector<PromptFeatures>& parts) {
    if (parts.empty()) throw ValidationError("concat_prompts: empty prompt set");
    if (parts.size() == 1) return parts[0];
    auto& t = ctx.tape();
    std::vector<Var> objs, kpts;
    PromptFeatures out;
    int offset = 0;
    for (const auto& p : parts) {
        objs.push_back(p.obj);
        kpts.push_back(p.kpt);
        for (const auto& s : p.slices) {
            out.slices.push_back({offset + s[0], offset + s[1]});
        }
        offset += p.total_keypoints();
    }
    out.obj = t.concat_rows(objs);
    out.kpt = t.concat_rows(kpts);
    return out;
}

VisualPrompt make_visual_prompt(const Image& img, const Box& box, const KeypointSet& kps,
                                const std::vector<std::string>& keypoint_names,
                                const std::string& object_name, int resolution, double margin) {
    const double bw = box.w * img.width, bh = box.h * img.height;
    const double side = std::max(bw, bh) * (1.0 + 2.0 * margin);
    const double cx = box.cx * img.width, cy = box.cy * img.height;
    const int x0 = static_cast<int>(std::lround(cx - side / 2.0));
    const int y0 = static_cast<int>(std::lround(cy - side / 2.0));
    const int s = std::max(1, static_cast<int>(std::lround(side)));

    VisualPrompt vp;
    vp.image = resize_nearest(crop(img, x0, y0, s, s), resolution, resolution);
    vp.object_name = object_name;
    vp.keypoint_names = keypoint_names;
    vp.keypoints.points.reserve(kps.size());
    for (const Keypoint& p : kps.points) {
        Keypoint q = p;
        if (p.visible()) {
            q.x = std::clamp((p.x * img.width - x0) / s, 0.0, 1.0);
            q.y = std::clamp((p.y * img.height - y0) / s, 0.0, 1.0);
        }
        vp.keypoints.points.push_back(q);
    }
    return vp;
}

}  // namespace ppose
