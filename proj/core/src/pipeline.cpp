#include "ppose/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace ppose {

using nlohmann::json;
using nn::GraphCtx;
using nn::Mat;
using nn::Tape;
using nn::Var;

std::string TrainConfig::to_json() const {
    json j;
    j["steps"] = steps;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["modality_prob"] = modality_prob;
    j["seed"] = seed;
    j["tau_obj"] = tau_obj;
    j["flip_augment"] = flip_augment;
    j["text_only"] = text_only;
    j["log_every"] = log_every;
    j["loss"] = {{"w_cls", loss.w_cls},     {"w_l1", loss.w_l1},
                 {"w_giou", loss.w_giou},   {"w_kpt_l1", loss.w_kpt_l1},
                 {"w_oks", loss.w_oks},     {"alpha", loss.alpha},
                 {"gamma", loss.gamma},     {"kpt_align_slice_only", loss.kpt_align_slice_only}};
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& s) {
    const json j = json::parse(s);
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.modality_prob = j.value("modality_prob", c.modality_prob);
    c.seed = j.value("seed", c.seed);
    c.tau_obj = j.value("tau_obj", c.tau_obj);
    c.flip_augment = j.value("flip_augment", c.flip_augment);
    c.text_only = j.value("text_only", c.text_only);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        c.loss.w_cls = l.value("w_cls", c.loss.w_cls);
        c.loss.w_l1 = l.value("w_l1", c.loss.w_l1);
        c.loss.w_giou = l.value("w_giou", c.loss.w_giou);
        c.loss.w_kpt_l1 = l.value("w_kpt_l1", c.loss.w_kpt_l1);
        c.loss.w_oks = l.value("w_oks", c.loss.w_oks);
        c.loss.alpha = l.value("alpha", c.loss.alpha);
        c.loss.gamma = l.value("gamma", c.loss.gamma);
        c.loss.kpt_align_slice_only =
            l.value("kpt_align_slice_only", c.loss.kpt_align_slice_only);
    }
    if (c.modality_prob < 0.0 || c.modality_prob > 1.0)
        throw ConfigError("train config: modality_prob must be in [0,1]");
    if (c.tau_obj <= 0.0 || c.tau_obj >= 1.0)
        throw ConfigError("train config: tau_obj must be in (0,1)");
    return c;
}

std::vector<double> sigmas_for(const CategorySpec& cat, double uniform_sigma) {
    static const std::vector<std::string> coco17 = {
        "nose",          "left eye",      "right eye",  "left ear",    "right ear",
        "left shoulder", "right shoulder", "left elbow", "right elbow", "left wrist",
        "right wrist",   "left hip",      "right hip",  "left knee",   "right knee",
        "left ankle",    "right ankle"};
    auto norm = [](std::string s) {
        for (auto& ch : s) {
            ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            if (ch == '_') ch = ' ';
        }
        return s;
    };
    if (cat.keypoint_names.size() == coco17.size()) {
        bool match = true;
        for (std::size_t i = 0; i < coco17.size(); ++i)
            match = match && norm(cat.keypoint_names[i]) == coco17[i];
        if (match) return coco_sigmas();
    }
    return uniform_sigmas(cat.keypoint_names.size(), uniform_sigma);
}

TextPrompt text_prompt_from_categories(const std::vector<CategorySpec>& cats,
                                       const std::string& style) {
    std::vector<const CategorySpec*> ordered;
    for (const auto& c : cats) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const CategorySpec* a, const CategorySpec* b) { return a->id < b->id; });
    TextPrompt p;
    p.style = style;
    for (const CategorySpec* c : ordered)
        p.classes.push_back({c->name, c->keypoint_names, {}});
    p.validate();
    return p;
}

std::vector<GroundTruth> ground_truths_for(const KeypointDataset& data, std::int64_t image_id,
                                           const std::map<int, int>& class_of_category,
                                           double uniform_sigma) {
    std::vector<GroundTruth> out;
    for (const auto& a : data.annotations) {
        if (a.image_id != image_id) continue;
        auto it = class_of_category.find(a.category_id);
        if (it == class_of_category.end()) continue;
        GroundTruth g;
        g.cls = it->second;
        g.box = a.box;
        g.kpts = a.kpts;
        g.sigmas = sigmas_for(*data.category(a.category_id), uniform_sigma);
        out.push_back(std::move(g));
    }
    return out;
}

Trainer::Trainer(Model& model, const TrainConfig& cfg, const KeypointDataset& data,
                 std::vector<Image> images)
    : model_(model), cfg_(cfg), data_(data), images_(std::move(images)), rng_(cfg.seed) {
    if (images_.size() != data_.images.size())
        throw ValidationError("trainer: images/records length mismatch");
    data_.validate();
    opt_.lr = cfg.lr;
    opt_.weight_decay = cfg.weight_decay;
    for (std::size_t i = 0; i < data_.annotations.size(); ++i)
        anns_by_category_[data_.annotations[i].category_id].push_back(i);
    for (std::size_t i = 0; i < data_.images.size(); ++i)
        image_index_[data_.images[i].id] = i;
}

PromptFeatures Trainer::encode_step_prompts(GraphCtx& ctx, bool visual,
                                            const std::vector<std::size_t>& batch,
                                            std::map<int, int>& class_of_category) {
    class_of_category.clear();
    if (visual) {
        // Categories present in the batch, in id order.
        std::set<std::int64_t> batch_ids;
        for (std::size_t b : batch) batch_ids.insert(data_.images[b].id);
        std::set<int> cats;
        for (const auto& a : data_.annotations)
            if (batch_ids.count(a.image_id)) cats.insert(a.category_id);

        std::vector<VisualPrompt> prompts;
        for (int cid : cats) {
            // Prefer an exemplar from outside the batch (the sampled pair's
            // other image); fall back to any annotation of the category.
            std::vector<std::size_t> pool, fallback;
            for (std::size_t ai : anns_by_category_[cid]) {
                if (batch_ids.count(data_.annotations[ai].image_id))
                    fallback.push_back(ai);
                else
                    pool.push_back(ai);
            }
            if (pool.empty()) pool = fallback;
            if (pool.empty()) {
                std::cerr << "[trainer] no exemplar for category " << cid
                          << "; falling back to textual prompts this step\n";
                return encode_step_prompts(ctx, false, batch, class_of_category);
            }
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            const Annotation& ann = data_.annotations[pool[pick(rng_)]];
            const CategorySpec& cat = *data_.category(cid);
            const Image& src = images_[image_index_.at(ann.image_id)];
            prompts.push_back(make_visual_prompt(src, ann.box, ann.kpts, cat.keypoint_names,
                                                 cat.name, model_.config().prompt_resolution));
            class_of_category[cid] = static_cast<int>(prompts.size()) - 1;
        }
        return model_.encode_visuals(ctx, prompts);
    }

    TextPrompt prompt = text_prompt_from_categories(data_.categories);
    int row = 0;
    std::vector<const CategorySpec*> ordered;
    for (const auto& c : data_.categories) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const CategorySpec* a, const CategorySpec* b) { return a->id < b->id; });
    for (const CategorySpec* c : ordered) class_of_category[c->id] = row++;
    return model_.encode_text(ctx, prompt);
}

LossBreakdown Trainer::step() {
    std::bernoulli_distribution coin(cfg_.modality_prob);
    const bool visual = !cfg_.text_only && cfg_.modality_prob > 0.0 &&
                        (cfg_.modality_prob >= 1.0 || coin(rng_));
    last_visual_ = visual;

    // Distinct batch images via a partial shuffle.
    std::vector<std::size_t> idx(images_.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size),
                                                 idx.size());
    for (std::size_t i = 0; i < bs; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng_)]);
    }
    std::vector<std::size_t> batch(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(bs));

    std::vector<char> flip(bs, 0);
    if (cfg_.flip_augment) {
        std::bernoulli_distribution half(0.5);
        for (std::size_t i = 0; i < bs; ++i) flip[i] = half(rng_);
    }

    Tape tape;
    GraphCtx ctx(tape, model_.params(), true);
    std::map<int, int> class_of_category;
    PromptFeatures prompts = encode_step_prompts(ctx, visual, batch, class_of_category);

    std::vector<Var> totals;
    LossBreakdown avg;
    for (std::size_t i = 0; i < bs; ++i) {
        const DatasetImage& rec = data_.images[batch[i]];
        Image img = images_[batch[i]];
        std::vector<GroundTruth> gts = ground_truths_for(data_, rec.id, class_of_category,
                                                         model_.config().uniform_sigma);
        if (flip[i]) {
            std::vector<Annotation> anns;
            for (const auto& a : data_.annotations)
                if (a.image_id == rec.id &&
                    class_of_category.count(a.category_id))
                    anns.push_back(a);
            hflip_sample(img, anns, data_.categories);
            gts.clear();
            for (const auto& a : anns) {
                GroundTruth g;
                g.cls = class_of_category.at(a.category_id);
                g.box = a.box;
                g.kpts = a.kpts;
                g.sigmas = sigmas_for(*data_.category(a.category_id),
                                      model_.config().uniform_sigma);
                gts.push_back(std::move(g));
            }
        }

        Model::Forward f = model_.forward_train(ctx, img, prompts, gts, cfg_.loss.cost());

        TotalLossInputs in;
        for (std::size_t l = 0; l < f.objects.layer_boxes.size(); ++l)
            in.obj_layers.push_back({f.objects.layer_boxes[l], f.obj_layer_logits[l]});
        for (std::size_t l = 0; l < f.kpts.layer_coords.size(); ++l)
            in.kpt_layers.push_back({f.kpts.layer_coords[l], f.kpt_layer_logits[l]});
        in.groups = f.kpts.queries.groups;
        in.class_of = f.class_of;
        in.slices = prompts.slices;
        in.gts = gts;
        in.weights = cfg_.loss;
        TotalLossResult r = total_loss(ctx, in);
        totals.push_back(r.total);
        avg.reg_obj += r.breakdown.reg_obj;
        avg.reg_kpt += r.breakdown.reg_kpt;
        avg.align_obj += r.breakdown.align_obj;
        avg.align_kpt += r.breakdown.align_kpt;
        avg.total += r.breakdown.total;
    }

    Var batch_total = totals[0];
    for (std::size_t i = 1; i < totals.size(); ++i) batch_total = tape.add(batch_total, totals[i]);
    batch_total = tape.scale(batch_total, 1.0 / static_cast<double>(totals.size()));
    tape.backward(batch_total);
    ctx.flush_grads();
    opt_.apply(model_.params());

    const double n = static_cast<double>(totals.size());
    avg.reg_obj /= n;
    avg.reg_kpt /= n;
    avg.align_obj /= n;
    avg.align_kpt /= n;
    avg.total /= n;
    ++steps_done_;
    return avg;
}

void Trainer::run(long steps, const std::function<void(long, const LossBreakdown&)>& on_log) {
    for (long s = 0; s < steps; ++s) {
        LossBreakdown b = step();
        if (on_log && cfg_.log_every > 0 && ((s + 1) % cfg_.log_every == 0 || s + 1 == steps))
            on_log(s + 1, b);
    }
}

std::vector<std::string> PromptSpec::class_names() const {
    std::vector<std::string> names;
    if (text)
        for (const auto& c : text->classes) names.push_back(c.object_name);
    for (const auto& v : visual) names.push_back(v.object_name);
    return names;
}

std::vector<Detection> run_inference(Model& model, const Image& img, const PromptSpec& spec,
                                     double tau) {
    if (spec.empty()) throw ValidationError("infer: empty prompt set");
    Tape tape;
    GraphCtx ctx(tape, model.params(), false);
    std::vector<PromptFeatures> parts;
    if (spec.text) parts.push_back(model.encode_text(ctx, *spec.text));
    if (!spec.visual.empty()) {
        for (const auto& v : spec.visual) parts.push_back(model.encode_visual(ctx, v));
    }
    PromptFeatures prompts = concat_prompts(ctx, parts);
    Model::Forward f = model.forward_infer(ctx, img, prompts, tau);
    return model.to_detections(ctx, f);
}

std::vector<VisualPrompt> visual_prompts_from_dataset(const KeypointDataset& data,
                                                      const std::vector<Image>& images,
                                                      int resolution) {
    std::map<std::int64_t, std::size_t> image_index;
    for (std::size_t i = 0; i < data.images.size(); ++i) image_index[data.images[i].id] = i;
    std::vector<const CategorySpec*> ordered;
    for (const auto& c : data.categories) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const CategorySpec* a, const CategorySpec* b) { return a->id < b->id; });
    std::vector<VisualPrompt> out;
    for (const CategorySpec* c : ordered) {
        const Annotation* first = nullptr;
        for (const auto& a : data.annotations)
            if (a.category_id == c->id) {
                first = &a;
                break;
            }
        if (!first) continue;
        const Image& src = images[image_index.at(first->image_id)];
        out.push_back(make_visual_prompt(src, first->box, first->kpts, c->keypoint_names, c->name,
                                         resolution));
    }
    return out;
}

double alignment_score(Model& model, const KeypointDataset& data,
                       const std::vector<Image>& images, AlignLevel level) {
    std::map<int, int> class_of_category;
    {
        std::vector<const CategorySpec*> ordered;
        for (const auto& c : data.categories) ordered.push_back(&c);
        std::sort(ordered.begin(), ordered.end(),
                  [](const CategorySpec* a, const CategorySpec* b) { return a->id < b->id; });
        int row = 0;
        for (const CategorySpec* c : ordered) class_of_category[c->id] = row++;
    }
    const TextPrompt prompt = text_prompt_from_categories(data.categories);

    double acc = 0.0;
    long count = 0;
    auto cosine = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
        const double na = a.norm(), nb = b.norm();
        if (na == 0.0 || nb == 0.0) return 0.0;
        return a.dot(b) / (na * nb);
    };

    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto gts = ground_truths_for(data, data.images[i].id, class_of_category,
                                           model.config().uniform_sigma);
        if (gts.empty()) continue;
        Tape tape;
        GraphCtx ctx(tape, model.params(), false);
        PromptFeatures prompts = model.encode_text(ctx, prompt);
        Model::Forward f = model.forward_train(ctx, images[i], prompts, gts, CostWeights{});

        const Mat& obj_rows = tape.val(f.enhanced.prompts.obj);
        const Mat& kpt_rows = tape.val(f.enhanced.prompts.kpt);
        const Mat& obj_emb = tape.val(f.objects.layer_embeddings.back());
        const Mat& kpt_emb = tape.val(f.kpts.layer_embeddings.back());

        for (const auto& pr : f.preliminary.pairs) {
            const GroundTruth& gt = gts[static_cast<std::size_t>(pr[1])];
            if (level == AlignLevel::object) {
                acc += cosine(obj_emb.row(pr[0]), obj_rows.row(gt.cls));
                ++count;
            } else {
                if (f.class_of[static_cast<std::size_t>(pr[0])] != gt.cls) continue;
                const auto& g = f.kpts.queries.groups[static_cast<std::size_t>(pr[0])];
                const auto& slice = prompts.slices[static_cast<std::size_t>(gt.cls)];
                for (int k = 0; k < g[1] - g[0]; ++k) {
                    acc += cosine(kpt_emb.row(g[0] + k), kpt_rows.row(slice[0] + k));
                    ++count;
                }
            }
        }
    }
    if (count == 0) throw DomainError("alignment_score: no ground-truth matches");
    return (acc / static_cast<double>(count) + 1.0) / 2.0;
}

EvalReport evaluate_dataset(Model& model, const KeypointDataset& data,
                            const std::vector<Image>& images, const PromptSpec& spec, double tau,
                            std::vector<std::vector<Detection>>* out_preds) {
    // Map categories onto prompt rows by name.
    const std::vector<std::string> names = spec.class_names();
    std::map<int, int> class_of_category;
    for (const auto& c : data.categories) {
        auto it = std::find(names.begin(), names.end(), c.name);
        if (it != names.end())
            class_of_category[c.id] = static_cast<int>(it - names.begin());
    }

    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<GroundTruth>> gts;
    for (std::size_t i = 0; i < images.size(); ++i) {
        preds.push_back(run_inference(model, images[i], spec, tau));
        gts.push_back(ground_truths_for(data, data.images[i].id, class_of_category,
                                        model.config().uniform_sigma));
    }

    EvalReport rep;
    rep.pck = evaluate_pck(preds, gts);
    ApResult ap = evaluate_ap(preds, gts);
    rep.ap = ap.ap;
    rep.ap_per_threshold = ap.per_threshold;
    if (out_preds) *out_preds = std::move(preds);
    return rep;
}

}  // namespace ppose
