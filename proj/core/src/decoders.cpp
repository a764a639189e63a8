#include "ppose/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ppose {

using ad::inverse_sigmoid;
using nn::GraphCtx;
using nn::MaskMat;
using nn::Mat;
using nn::TokenSequence;
using nn::Var;

nn::Mat fourier_rows(const Mat& points, int bands, double scale) {
    Mat out(points.rows(), 4 * bands);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const auto e = fourier_embed(points(i, 0), points(i, 1), bands, scale);
        for (std::size_t j = 0; j < e.size(); ++j) out(i, static_cast<Eigen::Index>(j)) = e[j];
    }
    return out;
}

std::vector<int> top_n_by_score(const Eigen::VectorXd& scores, int n) {
    if (n > scores.size()) throw ConfigError("top_n_by_score: n exceeds candidate count");
    std::vector<int> idx(static_cast<std::size_t>(scores.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores(a) > scores(b); });
    idx.resize(static_cast<std::size_t>(n));
    return idx;
}

QuerySelector::QuerySelector(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                             const DecoderConfig& cfg)
    : cfg(cfg) {
    head_hidden = nn::Linear(s, rng, prefix + ".hidden", cfg.dim, cfg.dim);
    head_out = nn::Linear(s, rng, prefix + ".out", cfg.dim, 4, true);
}

ObjectQuerySet QuerySelector::select(GraphCtx& ctx, const EnhancedPair& e, int n) const {
    auto& t = ctx.tape();
    const Mat& tokens = t.val(e.fmap.tokens);
    const Mat& obj = t.val(e.prompts.obj);
    const int total = static_cast<int>(tokens.rows());
    if (n > total) throw ConfigError("select_queries: n exceeds token count");

    Mat dots = tokens * obj.transpose();  // T x L
    Eigen::VectorXd scores = dots.rowwise().maxCoeff();
    ObjectQuerySet out;
    out.token_rows = top_n_by_score(scores, n);
    out.embeddings = t.gather_rows(e.fmap.tokens, out.token_rows);

    // Anchors: token position as center, level-scaled side.
    Mat anchors(n, 4);
    for (int i = 0; i < n; ++i) {
        const int row = out.token_rows[static_cast<std::size_t>(i)];
        int level = 0;
        while (level + 1 < e.fmap.geo.levels() &&
               row >= e.fmap.geo.level_start[static_cast<std::size_t>(level + 1)])
            ++level;
        const double side = cfg.anchor_base * std::pow(2.0, level);
        anchors(i, 0) = inverse_sigmoid(e.fmap.geo.positions(row, 0));
        anchors(i, 1) = inverse_sigmoid(e.fmap.geo.positions(row, 1));
        anchors(i, 2) = inverse_sigmoid(side);
        anchors(i, 3) = inverse_sigmoid(side);
    }
    Var delta = head_out.forward(ctx, t.relu(head_hidden.forward(ctx, out.embeddings)));
    out.ref_logits = t.add(t.constant(std::move(anchors)), delta);
    return out;
}

ObjectDecoder::ObjectDecoder(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                             const DecoderConfig& cfg, int levels)
    : cfg(cfg) {
    if (cfg.obj_layers < 1) throw ConfigError("object decoder: layers must be >= 1");
    for (int l = 0; l < cfg.obj_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        Layer layer;
        layer.pos_proj = nn::Linear(s, rng, lp + ".pos", 4 * cfg.fourier_bands, cfg.dim);
        layer.self_attn = nn::MultiHeadAttention(s, rng, lp + ".self", cfg.dim, cfg.heads);
        layer.image_cross = nn::DeformableAttention(s, rng, lp + ".img_cross", cfg.dim, cfg.heads,
                                                    levels, cfg.points_per_level);
        layer.prompt_cross = nn::MultiHeadAttention(s, rng, lp + ".prompt_cross", cfg.dim, cfg.heads);
        layer.ffn = nn::FeedForward(s, rng, lp + ".ffn", cfg.dim, cfg.ffn_hidden);
        layer.refine_hidden = nn::Linear(s, rng, lp + ".refine_hidden", cfg.dim, cfg.dim);
        layer.refine_out = nn::Linear(s, rng, lp + ".refine_out", cfg.dim, 4, true);
        layers.push_back(std::move(layer));
    }
}

ObjectDecodeResult ObjectDecoder::decode(GraphCtx& ctx, const ObjectQuerySet& init,
                                         const EnhancedPair& e) const {
    auto& t = ctx.tape();
    ObjectDecodeResult out;
    Var emb = init.embeddings;
    Var ref_logits = init.ref_logits;
    Var prompt_seq = t.concat_rows({e.prompts.obj, e.prompts.kpt});

    for (const Layer& layer : layers) {
        const Mat boxes_now = t.val(t.sigmoid(ref_logits));
        const Mat centers = boxes_now.leftCols(2);
        Mat half_wh = 0.5 * boxes_now.rightCols(2);
        Var pos = layer.pos_proj.forward(
            ctx, t.constant(fourier_rows(centers, cfg.fourier_bands, cfg.fourier_scale)));

        TokenSequence qs{emb, {}};
        emb = layer.self_attn.forward(ctx, qs, qs, nullptr, nullptr, pos, pos);
        emb = layer.image_cross.forward(ctx, emb, centers, e.fmap, &half_wh, pos);
        TokenSequence qs2{emb, {}};
        TokenSequence kv{prompt_seq, {}};
        emb = layer.prompt_cross.forward(ctx, qs2, kv, nullptr, nullptr, pos, Var{});
        emb = layer.ffn.forward(ctx, emb);

        Var delta = layer.refine_out.forward(ctx, t.relu(layer.refine_hidden.forward(ctx, emb)));
        ref_logits = t.add(ref_logits, delta);
        out.layer_boxes.push_back(t.sigmoid(ref_logits));
        out.layer_embeddings.push_back(emb);
    }
    out.queries.embeddings = emb;
    out.queries.ref_logits = ref_logits;
    out.queries.token_rows = init.token_rows;
    return out;
}

KeypointDecoder::KeypointDecoder(nn::ParamStore& s, std::mt19937_64& rng,
                                 const std::string& prefix, const DecoderConfig& cfg, int levels)
    : cfg(cfg) {
    if (cfg.kpt_layers < 1) throw ConfigError("keypoint decoder: layers must be >= 1");
    for (int l = 0; l < cfg.kpt_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        Layer layer;
        layer.pos_proj = nn::Linear(s, rng, lp + ".pos", 4 * cfg.fourier_bands, cfg.dim);
        layer.self_attn = nn::MultiHeadAttention(s, rng, lp + ".self", cfg.dim, cfg.heads);
        layer.image_cross = nn::DeformableAttention(s, rng, lp + ".img_cross", cfg.dim, cfg.heads,
                                                    levels, cfg.points_per_level);
        layer.prompt_cross = nn::MultiHeadAttention(s, rng, lp + ".prompt_cross", cfg.dim, cfg.heads);
        layer.ffn = nn::FeedForward(s, rng, lp + ".ffn", cfg.dim, cfg.ffn_hidden);
        layer.refine_hidden = nn::Linear(s, rng, lp + ".refine_hidden", cfg.dim, cfg.dim);
        layer.refine_out = nn::Linear(s, rng, lp + ".refine_out", cfg.dim, 2, true);
        layers.push_back(std::move(layer));
    }
}

KeypointDecodeResult KeypointDecoder::decode(GraphCtx& ctx, const ObjectDecodeResult& objects,
                                             const std::vector<int>& object_rows,
                                             const std::vector<int>& class_of,
                                             const EnhancedPair& e) const {
    auto& t = ctx.tape();
    if (object_rows.size() != class_of.size())
        throw ValidationError("keypoint decoder: object_rows/class_of length mismatch");

    KeypointDecodeResult out;
    std::vector<Var> emb_parts;
    std::vector<int> center_rows;  // owner object per keypoint query
    int cursor = 0;
    for (std::size_t i = 0; i < object_rows.size(); ++i) {
        const int cls = class_of[i];
        if (cls < 0 || cls >= e.prompts.num_classes())
            throw ValidationError("keypoint decoder: class index out of range");
        const auto& slice = e.prompts.slices[static_cast<std::size_t>(cls)];
        const int k = slice[1] - slice[0];
        if (k == 0) throw ValidationError("keypoint decoder: class has an empty keypoint slice");
        Var rows = t.slice_rows(e.prompts.kpt, slice[0], k);
        Var owner_emb = t.gather_rows(objects.queries.embeddings, {object_rows[i]});
        emb_parts.push_back(t.add_row_broadcast(rows, owner_emb));
        out.queries.groups.push_back({cursor, cursor + k});
        for (int j = 0; j < k; ++j) {
            out.queries.owner.push_back(static_cast<int>(i));
            center_rows.push_back(object_rows[i]);
        }
        cursor += k;
    }
    const int total = cursor;
    Var emb = emb_parts.size() == 1 ? emb_parts[0] : t.concat_rows(emb_parts);

    // Anchored at the owner's box center; gradient flows into the box logits.
    Var ref_logits = t.gather_rows(t.slice_cols(objects.queries.ref_logits, 0, 2), center_rows);

    // Owner box half-sizes scale the deformable sampling offsets.
    const Mat final_boxes = t.val(t.sigmoid(objects.queries.ref_logits));
    Mat half_wh(total, 2);
    for (int r = 0; r < total; ++r)
        half_wh.row(r) = 0.5 * final_boxes.row(center_rows[static_cast<std::size_t>(r)]).rightCols(2);

    // Self-attention stays within each owner's keypoint group.
    MaskMat group_mask = MaskMat::Zero(total, total);
    for (const auto& g : out.queries.groups)
        for (int a = g[0]; a < g[1]; ++a)
            for (int b = g[0]; b < g[1]; ++b) group_mask(a, b) = 1;

    Var prompt_seq = t.concat_rows({e.prompts.obj, e.prompts.kpt});

    for (const Layer& layer : layers) {
        const Mat points_now = t.val(t.sigmoid(ref_logits));
        Var pos = layer.pos_proj.forward(
            ctx, t.constant(fourier_rows(points_now, cfg.fourier_bands, cfg.fourier_scale)));

        TokenSequence qs{emb, {}};
        emb = layer.self_attn.forward(ctx, qs, qs, &group_mask, nullptr, pos, pos);
        emb = layer.image_cross.forward(ctx, emb, points_now, e.fmap, &half_wh, pos);
        TokenSequence qs2{emb, {}};
        TokenSequence kv{prompt_seq, {}};
        emb = layer.prompt_cross.forward(ctx, qs2, kv, nullptr, nullptr, pos, Var{});
        emb = layer.ffn.forward(ctx, emb);

        Var delta = layer.refine_out.forward(ctx, t.relu(layer.refine_hidden.forward(ctx, emb)));
        ref_logits = t.add(ref_logits, delta);
        out.layer_coords.push_back(t.sigmoid(ref_logits));
        out.layer_embeddings.push_back(emb);
    }
    out.queries.embeddings = emb;
    out.queries.ref_logits = ref_logits;
    return out;
}

ClassifyHead::ClassifyHead(nn::ParamStore& s, const std::string& prefix, int dim)
    : log_inv_temp_name(prefix + ".log_inv_temp"), bias_name(prefix + ".bias") {
    s.create(log_inv_temp_name, 1, 1).setConstant(std::log(std::sqrt(static_cast<double>(dim))));
    s.create(bias_name, 1, 1).setConstant(-2.0);
}

Var ClassifyHead::forward(GraphCtx& ctx, Var queries, Var prompt_rows) const {
    auto& t = ctx.tape();
    Var dots = t.matmul_nt(queries, prompt_rows);
    Var scaled = t.mul_scalar_var(dots, t.exp(ctx.p(log_inv_temp_name)));
    return t.add_scalar_var(scaled, ctx.p(bias_name));
}

nn::Mat classify_logits(const Mat& queries, const Mat& prompt_rows, double temperature,
                        double bias) {
    if (!(temperature > 0.0)) throw ConfigError("classify: temperature must be positive");
    return ((queries * prompt_rows.transpose()) / temperature).array() + bias;
}

}  // namespace ppose
