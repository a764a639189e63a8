#pragma once

#include "ppose/enhancer.hpp"
#include "ppose/geometry.hpp"
#include "ppose/nn.hpp"

namespace ppose {

struct DecoderConfig {
    int dim = 256;
    int heads = 8;
    int obj_layers = 2;
    int kpt_layers = 4;
    int num_queries = 100;
    int points_per_level = 4;
    int ffn_hidden = 1024;
    int fourier_bands = 8;
    double fourier_scale = 2.0 * 3.14159265358979323846;
    double anchor_base = 0.05;  // per-level anchor side: base * 2^level
};

// Object queries with their box estimates kept in sigmoid space; boxes stay
// valid (w, h > 0) under any additive refinement.
struct ObjectQuerySet {
    nn::Var embeddings;          // N x C
    nn::Var ref_logits;          // N x 4, sigmoid -> (cx, cy, w, h)
    std::vector<int> token_rows; // source token per query
};

struct ObjectDecodeResult {
    ObjectQuerySet queries;              // final embeddings + refs
    std::vector<nn::Var> layer_boxes;     // per layer: N x 4 after sigmoid
    std::vector<nn::Var> layer_embeddings;
};

// K keypoint queries per retained object, in the owner category's canonical
// keypoint order.
struct KeypointQuerySet {
    nn::Var embeddings;                      // (sum K_i) x C
    nn::Var ref_logits;                      // (sum K_i) x 2
    std::vector<int> owner;                  // object index per row
    std::vector<std::array<int, 2>> groups;  // [begin, end) rows per object
};

struct KeypointDecodeResult {
    KeypointQuerySet queries;
    std::vector<nn::Var> layer_coords;  // per layer: (sum K_i) x 2 after sigmoid
    std::vector<nn::Var> layer_embeddings;
};

// Stable top-n indices by descending score; ties keep index order.
std::vector<int> top_n_by_score(const Eigen::VectorXd& scores, int n);

// Scores every image token by its best object-prompt dot product and builds
// queries from the top-n tokens; ref boxes come from a zero-initializable
// head anchored at each token's position.
class QuerySelector {
  public:
    QuerySelector() = default;
    QuerySelector(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                  const DecoderConfig& cfg);

    ObjectQuerySet select(nn::GraphCtx& ctx, const EnhancedPair& e, int n) const;

    nn::Linear head_hidden, head_out;
    DecoderConfig cfg;
};

// Per-layer: self-attention, deformable image cross-attention around the
// current boxes, prompt cross-attention, ffn, then additive box refinement
// in inverse-sigmoid space. All intermediate boxes are returned for deep
// supervision.
class ObjectDecoder {
  public:
    ObjectDecoder() = default;
    ObjectDecoder(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                  const DecoderConfig& cfg, int levels);

    ObjectDecodeResult decode(nn::GraphCtx& ctx, const ObjectQuerySet& init,
                              const EnhancedPair& e) const;

    struct Layer {
        nn::Linear pos_proj;
        nn::MultiHeadAttention self_attn;
        nn::DeformableAttention image_cross;
        nn::MultiHeadAttention prompt_cross;
        nn::FeedForward ffn;
        nn::Linear refine_hidden, refine_out;
    };
    std::vector<Layer> layers;
    DecoderConfig cfg;
};

// Keypoint queries start from the owner class's enhanced keypoint prompt
// rows added to the owner object embedding, anchored at the owner box
// center. Self-attention is confined within each owner group.
class KeypointDecoder {
  public:
    KeypointDecoder() = default;
    KeypointDecoder(nn::ParamStore& s, std::mt19937_64& rng, const std::string& prefix,
                    const DecoderConfig& cfg, int levels);

    // `object_rows`: indices of retained objects in `objects`;
    // `class_of`: prompt class per retained object.
    KeypointDecodeResult decode(nn::GraphCtx& ctx, const ObjectDecodeResult& objects,
                                const std::vector<int>& object_rows,
                                const std::vector<int>& class_of, const EnhancedPair& e) const;

    struct Layer {
        nn::Linear pos_proj;
        nn::MultiHeadAttention self_attn;
        nn::DeformableAttention image_cross;
        nn::MultiHeadAttention prompt_cross;
        nn::FeedForward ffn;
        nn::Linear refine_hidden, refine_out;
    };
    std::vector<Layer> layers;
    DecoderConfig cfg;
};

// logits[i][j] = <q_i, p_j> / temperature + bias, with the temperature
// learned in log space (initialized to 1/sqrt(C)) and a learned scalar bias.
class ClassifyHead {
  public:
    ClassifyHead() = default;
    ClassifyHead(nn::ParamStore& s, const std::string& prefix, int dim);

    nn::Var forward(nn::GraphCtx& ctx, nn::Var queries, nn::Var prompt_rows) const;

    std::string log_inv_temp_name, bias_name;
};

// Plain-value contract of the classification rule (tests and tooling).
nn::Mat classify_logits(const nn::Mat& queries, const nn::Mat& prompt_rows, double temperature,
                        double bias);

// Fourier position embedding rows for a batch of normalized points.
nn::Mat fourier_rows(const nn::Mat& points, int bands, double scale);

}  // namespace ppose
