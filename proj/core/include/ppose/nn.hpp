#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ppose/tensor.hpp"

namespace ppose::nn {

using ad::MaskMat;
using ad::Mat;
using ad::Tape;
using ad::Var;

// Named parameter tensors plus their gradient and AdamW state. Construction
// order is irrelevant; the map keeps deterministic (sorted) iteration for
// the optimizer and checkpointing.
struct Param {
    Mat value;
    Mat grad;
    Mat m, v;  // AdamW moments, sized on first step
};

class ParamStore {
  public:
    Mat& create(const std::string& name, int rows, int cols);
    bool has(const std::string& name) const { return params_.count(name) != 0; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    std::map<std::string, Param>& all() { return params_; }
    const std::map<std::string, Param>& all() const { return params_; }
    void zero_grads();
    std::size_t parameter_count() const;

  private:
    std::map<std::string, Param> params_;
};

// Deterministic initializers.
void init_xavier(Mat& w, std::mt19937_64& rng);
void init_normal(Mat& w, std::mt19937_64& rng, double stddev);

// Decoupled weight decay Adam. apply() consumes and clears accumulated
// gradients; single-writer over the store.
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    long step_count = 0;

    void apply(ParamStore& store);
};

// One forward pass worth of parameter leases on a tape. In training mode
// leased leaves require grad; flush_grads() moves tape gradients into the
// store. Read-only in inference mode, so concurrent passes over one store
// are safe as long as nobody calls flush_grads/apply.
class GraphCtx {
  public:
    GraphCtx(Tape& tape, ParamStore& store, bool train)
        : tape_(tape), store_(store), train_(train) {}

    Tape& tape() { return tape_; }
    ParamStore& store() { return store_; }
    bool training() const { return train_; }

    Var p(const std::string& name);
    void flush_grads();

  private:
    Tape& tape_;
    ParamStore& store_;
    bool train_;
    std::map<std::string, Var> leased_;
};

// N tokens of width C with a validity mask; padded tokens never influence
// attention over valid ones.
struct TokenSequence {
    Var tokens;
    std::vector<std::uint8_t> mask;  // empty means all valid
};

// Geometry of tokenized multi-level image features: per-token normalized
// reference position, pyramid level, and per-level (h, w).
struct FeatureGeometry {
    Mat positions;                                // T x 2 in [0,1]
    std::vector<std::array<int, 2>> level_shapes;  // (h, w) per level
    std::vector<int> level_start;                  // row offset per level

    int tokens() const { return static_cast<int>(positions.rows()); }
    int levels() const { return static_cast<int>(level_shapes.size()); }
    static FeatureGeometry build(const std::vector<std::array<int, 2>>& shapes);
};

struct FeatureMap {
    Var tokens;  // T x C
    FeatureGeometry geo;
};

struct Linear {
    Linear() = default;
    Linear(ParamStore& s, std::mt19937_64& rng, const std::string& prefix, int in, int out,
           bool zero_init = false);
    Var forward(GraphCtx& ctx, Var x) const;

    std::string w_name, b_name;
};

struct LayerNorm {
    LayerNorm() = default;
    LayerNorm(ParamStore& s, const std::string& prefix, int dim);
    Var forward(GraphCtx& ctx, Var x) const;

    std::string g_name, b_name;
};

// Optional peeks into attention internals for tests.
struct AttnDebug {
    std::vector<Mat> head_weights;  // per head, queries x keys
    Mat pre_output;                 // before the output projection
};

// Post-norm multi-head attention block: out = LN(q + proj(attend(q, kv))).
struct MultiHeadAttention {
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& s, std::mt19937_64& rng, const std::string& prefix, int dim,
                       int heads);

    // attn_mask, when given, is queries x keys; 0 forbids attention.
    // q_pos/k_pos are added to queries/keys before projection (values stay
    // position-free and the residual uses the raw query tokens).
    Var forward(GraphCtx& ctx, const TokenSequence& q, const TokenSequence& kv,
                const MaskMat* attn_mask = nullptr, AttnDebug* debug = nullptr,
                Var q_pos = Var{}, Var k_pos = Var{}) const;

    int dim = 0, heads = 0;
    Linear wq, wk, wv, wo;
    LayerNorm norm;
};

// Position-wise two-layer MLP with residual and post-norm.
struct FeedForward {
    FeedForward() = default;
    FeedForward(ParamStore& s, std::mt19937_64& rng, const std::string& prefix, int dim,
                int hidden);
    Var forward(GraphCtx& ctx, Var x) const;

    Linear fc1, fc2;
    LayerNorm norm;
};

// Single-query-level deformable attention over a small feature pyramid.
// Each query predicts, per head and level, `points` sampling offsets and
// softmax weights; values are bilinearly sampled at ref + offset with
// zero padding outside [0,1]^2.
struct DeformableAttention {
    DeformableAttention() = default;
    DeformableAttention(ParamStore& s, std::mt19937_64& rng, const std::string& prefix, int dim,
                        int heads, int levels, int points);

    // ref_points: N x 2 (normalized); offset_scale: optional N x 2 factor
    // (e.g. box size / 2) applied to predicted offsets.
    Var forward(GraphCtx& ctx, Var queries, const Mat& ref_points, const FeatureMap& fmap,
                const Mat* offset_scale = nullptr, Var query_pos = Var{},
                AttnDebug* debug = nullptr) const;

    int dim = 0, heads = 0, levels = 0, points = 0;
    Linear value_proj, offset_proj, weight_proj, out_proj;
    LayerNorm norm;
};

// Raw fused sampling core (exposed for oracle tests): for each query n and
// head h, output += weight(n,h,l,p) * bilinear(values_level_l, head h cols,
// loc(n,h,l,p)). `weights` rows hold head-major softmax logits.
Var deformable_sample(Tape& tape, Var values, const FeatureGeometry& geo, const Mat& ref_points,
                      Var offsets, Var weight_logits, int heads, int points);

// Bilinear read of one level at a normalized point; zero outside. Plain
// value-space helper, also used as the direct-indexing oracle in tests.
Eigen::RowVectorXd bilinear_at(const Mat& values, const FeatureGeometry& geo, int level, double x,
                               double y, int col0 = 0, int ncols = -1);

}  // namespace ppose::nn
