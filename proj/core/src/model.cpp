#include "ppose/model.hpp"

#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "ppose/manifest.hpp"

namespace ppose {

using nlohmann::json;
using nn::GraphCtx;
using nn::Mat;
using nn::Var;

std::string ModelConfig::to_json() const {
    json j;
    j["dim"] = dim;
    j["heads"] = heads;
    j["enhancer_layers"] = enhancer_layers;
    j["obj_decoder_layers"] = obj_decoder_layers;
    j["kpt_decoder_layers"] = kpt_decoder_layers;
    j["num_queries"] = num_queries;
    j["points_per_level"] = points_per_level;
    j["ffn_mult"] = ffn_mult;
    j["strides"] = strides;
    j["fourier_bands"] = fourier_bands;
    j["fourier_scale"] = fourier_scale;
    j["prompt_resolution"] = prompt_resolution;
    j["prompt_patch"] = prompt_patch;
    j["text_layers"] = text_layers;
    j["vp_layers"] = vp_layers;
    j["max_text_len"] = max_text_len;
    j["anchor_base"] = anchor_base;
    j["uniform_sigma"] = uniform_sigma;
    j["use_vanilla_image_attn"] = use_vanilla_image_attn;
    j["classwise_prompt_mask"] = classwise_prompt_mask;
    j["kpt_align_slice_only"] = kpt_align_slice_only;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
    const json j = json::parse(s);
    ModelConfig c;
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.enhancer_layers = j.value("enhancer_layers", c.enhancer_layers);
    c.obj_decoder_layers = j.value("obj_decoder_layers", c.obj_decoder_layers);
    c.kpt_decoder_layers = j.value("kpt_decoder_layers", c.kpt_decoder_layers);
    c.num_queries = j.value("num_queries", c.num_queries);
    c.points_per_level = j.value("points_per_level", c.points_per_level);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.strides = j.value("strides", c.strides);
    c.fourier_bands = j.value("fourier_bands", c.fourier_bands);
    c.fourier_scale = j.value("fourier_scale", c.fourier_scale);
    c.prompt_resolution = j.value("prompt_resolution", c.prompt_resolution);
    c.prompt_patch = j.value("prompt_patch", c.prompt_patch);
    c.text_layers = j.value("text_layers", c.text_layers);
    c.vp_layers = j.value("vp_layers", c.vp_layers);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.anchor_base = j.value("anchor_base", c.anchor_base);
    c.uniform_sigma = j.value("uniform_sigma", c.uniform_sigma);
    c.use_vanilla_image_attn = j.value("use_vanilla_image_attn", c.use_vanilla_image_attn);
    c.classwise_prompt_mask = j.value("classwise_prompt_mask", c.classwise_prompt_mask);
    c.kpt_align_slice_only = j.value("kpt_align_slice_only", c.kpt_align_slice_only);
    return c;
}

Model::Model(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t init_seed)
    : cfg_(cfg), vocab_(std::make_unique<Vocabulary>(vocab)) {
    std::mt19937_64 rng(init_seed);

    for (std::size_t l = 0; l < cfg.strides.size(); ++l) {
        const std::string prefix = "backbone.level" + std::to_string(l);
        const int patch_dim = cfg.strides[l] * cfg.strides[l] * 3;
        Mat& w = params_.create(prefix + ".W", patch_dim, cfg.dim);
        nn::init_xavier(w, rng);
        params_.create(prefix + ".b", 1, cfg.dim);
        level_proj_.push_back(prefix);
        level_norm_.emplace_back(params_, prefix + ".norm", cfg.dim);
    }
    Mat& lev = params_.create("backbone.level_embed", static_cast<int>(cfg.strides.size()), cfg.dim);
    nn::init_normal(lev, rng, 0.02);
    level_embed_name_ = "backbone.level_embed";
    Mat& bpos = params_.create("backbone.pos.W", 4 * cfg.fourier_bands, cfg.dim);
    nn::init_xavier(bpos, rng);
    params_.create("backbone.pos.b", 1, cfg.dim);
    backbone_pos_name_ = "backbone.pos";

    TextEncoderConfig tc;
    tc.dim = cfg.dim;
    tc.heads = cfg.heads;
    tc.layers = cfg.text_layers;
    tc.max_len = cfg.max_text_len;
    tc.ffn_hidden = cfg.ffn_hidden();
    text_ = TextEncoder(params_, rng, "text", *vocab_, tc);

    VisualEncoderConfig vc;
    vc.dim = cfg.dim;
    vc.heads = cfg.heads;
    vc.layers = cfg.vp_layers;
    vc.resolution = cfg.prompt_resolution;
    vc.patch = cfg.prompt_patch;
    vc.fourier_bands = cfg.fourier_bands;
    vc.fourier_scale = cfg.fourier_scale;
    vc.ffn_hidden = cfg.ffn_hidden();
    visual_ = VisualPromptEncoder(params_, rng, "visual", vc);

    EnhancerConfig ec;
    ec.dim = cfg.dim;
    ec.heads = cfg.heads;
    ec.layers = cfg.enhancer_layers;
    ec.points_per_level = cfg.points_per_level;
    ec.ffn_hidden = cfg.ffn_hidden();
    ec.use_vanilla_image_attn = cfg.use_vanilla_image_attn;
    ec.classwise_prompt_mask = cfg.classwise_prompt_mask;
    enhancer_ = CrossModalityEnhancer(params_, rng, "enhancer", ec,
                                      static_cast<int>(cfg.strides.size()));

    DecoderConfig dc;
    dc.dim = cfg.dim;
    dc.heads = cfg.heads;
    dc.obj_layers = cfg.obj_decoder_layers;
    dc.kpt_layers = cfg.kpt_decoder_layers;
    dc.num_queries = cfg.num_queries;
    dc.points_per_level = cfg.points_per_level;
    dc.ffn_hidden = cfg.ffn_hidden();
    dc.fourier_bands = cfg.fourier_bands;
    dc.fourier_scale = cfg.fourier_scale;
    dc.anchor_base = cfg.anchor_base;
    selector_ = QuerySelector(params_, rng, "selector", dc);
    obj_decoder_ = ObjectDecoder(params_, rng, "obj_decoder", dc,
                                 static_cast<int>(cfg.strides.size()));
    kpt_decoder_ = KeypointDecoder(params_, rng, "kpt_decoder", dc,
                                   static_cast<int>(cfg.strides.size()));
    obj_classify_ = ClassifyHead(params_, "classify.obj", cfg.dim);
    kpt_classify_ = ClassifyHead(params_, "classify.kpt", cfg.dim);
}

nn::FeatureMap Model::embed_image(GraphCtx& ctx, const Image& img) const {
    auto& t = ctx.tape();
    std::vector<std::array<int, 2>> shapes;
    for (int s : cfg_.strides) {
        if (img.width % s != 0 || img.height % s != 0)
            throw ValidationError("embed_image: image size must be divisible by every stride");
        shapes.push_back({img.height / s, img.width / s});
    }
    nn::FeatureMap fm;
    fm.geo = nn::FeatureGeometry::build(shapes);

    std::vector<Var> level_tokens;
    for (std::size_t l = 0; l < cfg_.strides.size(); ++l) {
        const int s = cfg_.strides[l];
        const int gh = img.height / s, gw = img.width / s;
        Mat patches(gh * gw, s * s * 3);
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                int col = 0;
                for (int py = 0; py < s; ++py)
                    for (int px = 0; px < s; ++px)
                        for (int c = 0; c < 3; ++c)
                            patches(gy * gw + gx, col++) = img.at(gx * s + px, gy * s + py, c);
            }
        Var tok = t.add_row_broadcast(
            t.matmul(t.constant(std::move(patches)), ctx.p(level_proj_[l] + ".W")),
            ctx.p(level_proj_[l] + ".b"));
        tok = level_norm_[l].forward(ctx, tok);
        tok = t.add_row_broadcast(
            tok, t.slice_rows(ctx.p(level_embed_name_), static_cast<int>(l), 1));
        level_tokens.push_back(tok);
    }
    Var tokens = level_tokens.size() == 1 ? level_tokens[0] : t.concat_rows(level_tokens);

    // Shared Fourier position code over token reference points.
    Var pos = t.add_row_broadcast(
        t.matmul(t.constant(fourier_rows(fm.geo.positions, cfg_.fourier_bands, cfg_.fourier_scale)),
                 ctx.p(backbone_pos_name_ + ".W")),
        ctx.p(backbone_pos_name_ + ".b"));
    fm.tokens = t.add(tokens, pos);
    return fm;
}

PromptFeatures Model::encode_text(GraphCtx& ctx, const TextPrompt& p) const {
    return text_.encode(ctx, p);
}

PromptFeatures Model::encode_visual(GraphCtx& ctx, const VisualPrompt& p) const {
    return visual_.encode(ctx, p);
}

PromptFeatures Model::encode_visuals(GraphCtx& ctx, const std::vector<VisualPrompt>& ps) const {
    std::vector<PromptFeatures> parts;
    parts.reserve(ps.size());
    for (const auto& p : ps) parts.push_back(visual_.encode(ctx, p));
    return concat_prompts(ctx, parts);
}

Model::Forward Model::forward_common(GraphCtx& ctx, const Image& img,
                                     const PromptFeatures& prompts, Forward& f) const {
    nn::FeatureMap fm = embed_image(ctx, img);
    f.enhanced = enhancer_.enhance(ctx, fm, prompts);
    ObjectQuerySet init = selector_.select(ctx, f.enhanced, cfg_.num_queries);
    f.objects = obj_decoder_.decode(ctx, init, f.enhanced);
    for (const Var& emb : f.objects.layer_embeddings)
        f.obj_layer_logits.push_back(obj_classify_.forward(ctx, emb, f.enhanced.prompts.obj));
    return f;
}

Model::Forward Model::forward_train(GraphCtx& ctx, const Image& img,
                                    const PromptFeatures& prompts,
                                    const std::vector<GroundTruth>& gts,
                                    const CostWeights& w) const {
    Forward f;
    forward_common(ctx, img, prompts, f);
    auto& t = ctx.tape();

    // Preliminary class assignment: matched slots take their ground-truth
    // class, the rest fall back to the argmax class.
    const Mat& logits = t.val(f.obj_layer_logits.back());
    const Mat& boxes = t.val(f.objects.layer_boxes.back());
    std::vector<Detection> dets(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        dets[static_cast<std::size_t>(i)].box =
            Box{boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)};
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            dets[static_cast<std::size_t>(i)].obj_logits.push_back(logits(i, j));
    }
    f.preliminary = hungarian(match_cost(dets, gts, w));

    f.object_rows.resize(static_cast<std::size_t>(cfg_.num_queries));
    std::iota(f.object_rows.begin(), f.object_rows.end(), 0);
    f.class_of.resize(static_cast<std::size_t>(cfg_.num_queries));
    for (int i = 0; i < cfg_.num_queries; ++i) {
        Eigen::Index best = 0;
        logits.row(i).maxCoeff(&best);
        f.class_of[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    for (const auto& pr : f.preliminary.pairs)
        f.class_of[static_cast<std::size_t>(pr[0])] = gts[static_cast<std::size_t>(pr[1])].cls;

    f.kpts = kpt_decoder_.decode(ctx, f.objects, f.object_rows, f.class_of, f.enhanced);
    for (const Var& emb : f.kpts.layer_embeddings)
        f.kpt_layer_logits.push_back(kpt_classify_.forward(ctx, emb, f.enhanced.prompts.kpt));
    return f;
}

Model::Forward Model::forward_infer(GraphCtx& ctx, const Image& img,
                                    const PromptFeatures& prompts, double tau) const {
    if (prompts.num_classes() == 0) throw ValidationError("infer: empty prompt set");
    Forward f;
    forward_common(ctx, img, prompts, f);
    auto& t = ctx.tape();

    const Mat& logits = t.val(f.obj_layer_logits.back());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        const double top = logits.row(i).maxCoeff(&best);
        const double score = 1.0 / (1.0 + std::exp(-top));
        if (score >= tau) {
            f.object_rows.push_back(static_cast<int>(i));
            f.class_of.push_back(static_cast<int>(best));
        }
    }
    if (!f.object_rows.empty()) {
        f.kpts = kpt_decoder_.decode(ctx, f.objects, f.object_rows, f.class_of, f.enhanced);
        f.kpt_layer_logits.push_back(
            kpt_classify_.forward(ctx, f.kpts.layer_embeddings.back(), f.enhanced.prompts.kpt));
    }
    return f;
}

std::vector<Detection> Model::to_detections(GraphCtx& ctx, const Forward& f) const {
    auto& t = ctx.tape();
    const Mat& logits = t.val(f.obj_layer_logits.back());
    const Mat& boxes = t.val(f.objects.layer_boxes.back());
    std::vector<Detection> out;
    for (std::size_t k = 0; k < f.object_rows.size(); ++k) {
        const int row = f.object_rows[k];
        Detection d;
        d.cls = f.class_of[k];
        d.box = Box{boxes(row, 0), boxes(row, 1), boxes(row, 2), boxes(row, 3)};
        d.obj_logits.resize(static_cast<std::size_t>(logits.cols()));
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            d.obj_logits[static_cast<std::size_t>(j)] = logits(row, j);
        d.score = 1.0 / (1.0 + std::exp(-logits.row(row).maxCoeff()));
        if (!f.kpts.layer_coords.empty()) {
            const Mat& coords = t.val(f.kpts.layer_coords.back());
            const auto& g = f.kpts.queries.groups[k];
            for (int r = g[0]; r < g[1]; ++r)
                d.kpts.points.push_back({coords(r, 0), coords(r, 1), Visibility::visible});
            if (!f.kpt_layer_logits.empty()) {
                const Mat& kl = t.val(f.kpt_layer_logits.back());
                d.kpt_logits = kl.middleRows(g[0], g[1] - g[0]);
            }
        }
        out.push_back(std::move(d));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_str(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

json categories_to_json(const std::vector<CategorySpec>& cats) {
    json arr = json::array();
    for (const auto& c : cats) {
        json jc;
        jc["id"] = c.id;
        jc["name"] = c.name;
        jc["keypoint_names"] = c.keypoint_names;
        json sp = json::array();
        for (const auto& p : c.swap_pairs) sp.push_back({p[0], p[1]});
        jc["swap_pairs"] = sp;
        json sk = json::array();
        for (const auto& e : c.skeleton) sk.push_back({e[0], e[1]});
        jc["skeleton"] = sk;
        arr.push_back(jc);
    }
    return arr;
}

std::vector<CategorySpec> categories_from_json(const json& arr) {
    std::vector<CategorySpec> cats;
    for (const auto& jc : arr) {
        CategorySpec c;
        c.id = jc.at("id").get<int>();
        c.name = jc.at("name").get<std::string>();
        c.keypoint_names = jc.at("keypoint_names").get<std::vector<std::string>>();
        for (const auto& p : jc.at("swap_pairs"))
            c.swap_pairs.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
        c.swap_pairs_declared = true;
        for (const auto& e : jc.at("skeleton"))
            c.skeleton.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
        cats.push_back(std::move(c));
    }
    return cats;
}

constexpr char kMagic[4] = {'P', 'P', 'C', 'K'};
constexpr std::uint64_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Model& model, const std::vector<CategorySpec>& categories,
                     const std::string& path) {
    json meta;
    meta["model_config"] = json::parse(model.config().to_json());
    meta["vocab"] = model.vocab().tokens();
    meta["categories"] = categories_to_json(categories);

    std::ostringstream os(std::ios::binary);
    os.write(kMagic, 4);
    write_u64(os, kCheckpointVersion);
    write_str(os, meta.dump());
    write_u64(os, model.params().all().size());
    for (const auto& [name, p] : model.params().all()) {
        write_str(os, name);
        write_u64(os, static_cast<std::uint64_t>(p.value.rows()));
        write_u64(os, static_cast<std::uint64_t>(p.value.cols()));
        os.write(reinterpret_cast<const char*>(p.value.data()),
                 static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    }
    const std::string blob = os.str();
    atomic_write_bytes(path, std::vector<unsigned char>(blob.begin(), blob.end()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw LoadError("checkpoint: bad magic in " + path);
    const std::uint64_t version = read_u64(is);
    if (version != kCheckpointVersion)
        throw LoadError("checkpoint: unsupported version " + std::to_string(version));
    const json meta = json::parse(read_str(is));

    ModelConfig cfg = ModelConfig::from_json(meta.at("model_config").dump());
    std::vector<std::string> vocab_tokens = meta.at("vocab").get<std::vector<std::string>>();
    // Reserved tokens are stored explicitly; strip them before rebuilding.
    std::vector<std::string> words(vocab_tokens.begin() + 2, vocab_tokens.end());
    Vocabulary vocab(words);

    Checkpoint ck;
    ck.model = std::make_unique<Model>(cfg, vocab, 0);
    ck.categories = categories_from_json(meta.at("categories"));

    const std::uint64_t n = read_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = read_str(is);
        const std::uint64_t rows = read_u64(is), cols = read_u64(is);
        nn::Param& p = ck.model->params().at(name);
        if (static_cast<std::uint64_t>(p.value.rows()) != rows ||
            static_cast<std::uint64_t>(p.value.cols()) != cols)
            throw LoadError("checkpoint: shape mismatch for " + name);
        is.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(sizeof(double) * rows * cols));
    }
    if (!is) throw LoadError("checkpoint: truncated file " + path);
    return ck;
}

}  // namespace ppose
