#include "ppose/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "ppose/manifest.hpp"
#include "ppose/text.hpp"

namespace ppose {

using nlohmann::json;
namespace fs = std::filesystem;

const CategorySpec* KeypointDataset::category(int id) const {
    for (const auto& c : categories)
        if (c.id == id) return &c;
    return nullptr;
}

const DatasetImage* KeypointDataset::image(std::int64_t id) const {
    for (const auto& im : images)
        if (im.id == id) return &im;
    return nullptr;
}

void KeypointDataset::validate() const {
    std::set<int> cat_ids;
    for (const auto& c : categories) {
        if (!cat_ids.insert(c.id).second)
            throw LoadError(name + ": duplicate category id " + std::to_string(c.id));
        std::set<std::string> kp(c.keypoint_names.begin(), c.keypoint_names.end());
        if (kp.size() != c.keypoint_names.size())
            throw LoadError(name + ": duplicate keypoint name in category '" + c.name + "'");
        c.swap_map();  // throws ConfigError if not involutive
    }
    std::set<std::int64_t> img_ids;
    for (const auto& im : images)
        if (!img_ids.insert(im.id).second)
            throw LoadError(name + ": duplicate image id " + std::to_string(im.id));
    for (const auto& a : annotations) {
        if (!img_ids.count(a.image_id))
            throw LoadError(name + ": annotation " + std::to_string(a.id) +
                            " references missing image " + std::to_string(a.image_id));
        const CategorySpec* c = category(a.category_id);
        if (!c)
            throw LoadError(name + ": annotation " + std::to_string(a.id) +
                            " references missing category " + std::to_string(a.category_id));
        if (a.kpts.size() != c->keypoint_names.size())
            throw LoadError(name + ": annotation " + std::to_string(a.id) + " has " +
                            std::to_string(a.kpts.size()) + " keypoints, category '" + c->name +
                            "' declares " + std::to_string(c->keypoint_names.size()));
    }
}

namespace {

json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw LoadError(path + ": " + e.what());
    }
    return j;
}

// Pairs "left ..." with "right ..." keypoint names (after lowercasing and
// underscore normalization) when a file does not declare swap pairs.
std::vector<std::array<int, 2>> infer_swap_pairs(const std::vector<std::string>& names) {
    auto normalize = [](std::string s) {
        for (auto& ch : s) {
            ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            if (ch == '_') ch = ' ';
        }
        return s;
    };
    std::map<std::string, int> by_name;
    for (std::size_t i = 0; i < names.size(); ++i)
        by_name[normalize(names[i])] = static_cast<int>(i);
    std::vector<std::array<int, 2>> pairs;
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::string n = normalize(names[i]);
        const std::string left = "left";
        if (n.rfind(left, 0) == 0) {
            std::string partner = "right" + n.substr(left.size());
            auto it = by_name.find(partner);
            if (it != by_name.end()) pairs.push_back({static_cast<int>(i), it->second});
        }
    }
    return pairs;
}

std::vector<unsigned char> b64_decode(const std::string& in);
std::string b64_encode(const unsigned char* data, std::size_t len);

void require_section(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key) || !j[key].is_array())
        throw LoadError(path + ": missing section '" + std::string(key) + "'");
}

}  // namespace

KeypointDataset load_dataset(const std::string& path, LoadReport* report) {
    const json j = read_json(path);
    const bool unified = j.contains("format");
    if (unified && j["format"] != "unified-keypoints/v1")
        throw LoadError(path + ": unknown format tag " + j["format"].dump());
    require_section(j, "images", path);
    require_section(j, "annotations", path);
    require_section(j, "categories", path);

    const fs::path base = fs::path(path).parent_path();
    KeypointDataset d;
    d.name = j.value("name", fs::path(path).stem().string());

    for (const auto& jc : j["categories"]) {
        CategorySpec c;
        c.id = jc.at("id").get<int>();
        c.name = jc.at("name").get<std::string>();
        if (jc.contains("keypoints"))
            c.keypoint_names = jc["keypoints"].get<std::vector<std::string>>();
        else if (jc.contains("keypoint_names"))
            c.keypoint_names = jc["keypoint_names"].get<std::vector<std::string>>();
        if (jc.contains("swap_pairs")) {
            for (const auto& p : jc["swap_pairs"])
                c.swap_pairs.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
            c.swap_pairs_declared = true;
        } else {
            c.swap_pairs = infer_swap_pairs(c.keypoint_names);
            c.swap_pairs_declared = !c.swap_pairs.empty();
        }
        if (jc.contains("skeleton"))
            for (const auto& e : jc["skeleton"]) {
                // plain COCO skeletons are 1-indexed
                const int off = unified ? 0 : 1;
                c.skeleton.push_back({e.at(0).get<int>() - off, e.at(1).get<int>() - off});
            }
        if (jc.contains("taxonomy")) {
            const auto& t = jc["taxonomy"];
            c.taxonomy.species = t.value("species", "");
            c.taxonomy.family = t.value("family", "");
            c.taxonomy.order = t.value("order", "");
            c.taxonomy.cls = t.value("class", "");
        }
        d.categories.push_back(std::move(c));
    }

    for (const auto& ji : j["images"]) {
        DatasetImage im;
        im.id = ji.at("id").get<std::int64_t>();
        im.width = ji.at("width").get<int>();
        im.height = ji.at("height").get<int>();
        if (im.width <= 0 || im.height <= 0)
            throw LoadError(path + ": image " + std::to_string(im.id) + " has non-positive size");
        if (ji.contains("file_name")) {
            const fs::path p = ji["file_name"].get<std::string>();
            im.file_name = p.is_absolute() ? p.string() : (base / p).string();
        }
        if (ji.contains("pixels_b64")) {
            im.pixels = b64_decode(ji["pixels_b64"].get<std::string>());
            if (im.pixels.size() != static_cast<std::size_t>(im.width) * im.height * 3)
                throw LoadError(path + ": image " + std::to_string(im.id) +
                                " embedded pixel size mismatch");
        }
        d.images.push_back(std::move(im));
    }

    auto note = [&](const std::string& where, const std::string& what) {
        if (report) report->issues.push_back({where, what});
    };

    for (const auto& ja : j["annotations"]) {
        Annotation a;
        a.id = ja.at("id").get<std::int64_t>();
        a.image_id = ja.at("image_id").get<std::int64_t>();
        a.category_id = ja.at("category_id").get<int>();
        const DatasetImage* im = d.image(a.image_id);
        if (!im)
            throw LoadError(path + ": annotation " + std::to_string(a.id) +
                            " references missing image " + std::to_string(a.image_id));
        const CategorySpec* cat = d.category(a.category_id);
        if (!cat)
            throw LoadError(path + ": annotation " + std::to_string(a.id) +
                            " references missing category " + std::to_string(a.category_id));
        const double W = im->width, H = im->height;

        const auto& bb = ja.at("bbox");
        if (bb.size() != 4)
            throw LoadError(path + ": annotation " + std::to_string(a.id) + " has malformed bbox");
        double x0 = bb[0].get<double>(), y0 = bb[1].get<double>();
        double x1, y1;
        if (unified) {
            x1 = bb[2].get<double>();
            y1 = bb[3].get<double>();
        } else {  // COCO convention: x, y, w, h
            x1 = x0 + bb[2].get<double>();
            y1 = y0 + bb[3].get<double>();
        }
        if (x1 <= x0 || y1 <= y0)
            throw LoadError(path + ": annotation " + std::to_string(a.id) + " has a degenerate box");
        if (x0 < 0 || y0 < 0 || x1 > W || y1 > H) {
            note("annotation " + std::to_string(a.id), "box outside image, clamped");
            x0 = std::clamp(x0, 0.0, W);
            x1 = std::clamp(x1, 0.0, W);
            y0 = std::clamp(y0, 0.0, H);
            y1 = std::clamp(y1, 0.0, H);
        }
        a.box = box_from_xyxy({snap_coord(x0 / W), snap_coord(y0 / H), snap_coord(x1 / W),
                               snap_coord(y1 / H)});

        const auto& kp = ja.at("keypoints");
        if (kp.size() != cat->keypoint_names.size() * 3)
            throw LoadError(path + ": annotation " + std::to_string(a.id) + " has " +
                            std::to_string(kp.size() / 3) + " keypoints, category '" + cat->name +
                            "' declares " + std::to_string(cat->keypoint_names.size()));
        for (std::size_t k = 0; k < cat->keypoint_names.size(); ++k) {
            Keypoint p;
            double px = kp[3 * k].get<double>(), py = kp[3 * k + 1].get<double>();
            const int raw = kp[3 * k + 2].get<int>();
            if (raw < 0 || raw > 2)
                note("annotation " + std::to_string(a.id),
                     "visibility flag " + std::to_string(raw) + " outside {0,1,2}");
            p.v = visibility_from_raw(raw);
            if (p.visible() && (px < 0 || py < 0 || px > W || py > H)) {
                note("annotation " + std::to_string(a.id), "visible keypoint outside image, clamped");
                px = std::clamp(px, 0.0, W);
                py = std::clamp(py, 0.0, H);
            }
            p.x = snap_coord(px / W);
            p.y = snap_coord(py / H);
            a.kpts.points.push_back(p);
        }
        d.annotations.push_back(std::move(a));
    }
    d.validate();
    return d;
}

void save_dataset(const KeypointDataset& d, const std::string& path) {
    json j;
    j["format"] = "unified-keypoints/v1";
    j["name"] = d.name;
    j["categories"] = json::array();
    for (const auto& c : d.categories) {
        json jc;
        jc["id"] = c.id;
        jc["name"] = c.name;
        jc["keypoint_names"] = c.keypoint_names;
        jc["swap_pairs"] = json::array();
        for (const auto& p : c.swap_pairs) jc["swap_pairs"].push_back({p[0], p[1]});
        if (!c.skeleton.empty()) {
            jc["skeleton"] = json::array();
            for (const auto& e : c.skeleton) jc["skeleton"].push_back({e[0], e[1]});
        }
        if (!c.taxonomy.empty()) {
            json t;
            if (!c.taxonomy.species.empty()) t["species"] = c.taxonomy.species;
            if (!c.taxonomy.family.empty()) t["family"] = c.taxonomy.family;
            if (!c.taxonomy.order.empty()) t["order"] = c.taxonomy.order;
            if (!c.taxonomy.cls.empty()) t["class"] = c.taxonomy.cls;
            jc["taxonomy"] = t;
        }
        j["categories"].push_back(jc);
    }
    j["images"] = json::array();
    const fs::path base = fs::path(path).parent_path();
    for (const auto& im : d.images) {
        json ji;
        ji["id"] = im.id;
        ji["width"] = im.width;
        ji["height"] = im.height;
        if (!im.file_name.empty())
            ji["file_name"] = fs::path(im.file_name).lexically_proximate(base).string();
        if (!im.pixels.empty())
            ji["pixels_b64"] = b64_encode(im.pixels.data(), im.pixels.size());
        j["images"].push_back(ji);
    }
    j["annotations"] = json::array();
    for (const auto& a : d.annotations) {
        const DatasetImage* im = d.image(a.image_id);
        const double W = im->width, H = im->height;
        json ja;
        ja["id"] = a.id;
        ja["image_id"] = a.image_id;
        ja["category_id"] = a.category_id;
        const auto c = box_to_xyxy(a.box);
        ja["bbox"] = {c[0] * W, c[1] * H, c[2] * W, c[3] * H};
        json kp = json::array();
        for (const auto& p : a.kpts.points) {
            kp.push_back(p.x * W);
            kp.push_back(p.y * H);
            kp.push_back(p.visible() ? 2 : 0);
        }
        ja["keypoints"] = kp;
        j["annotations"].push_back(ja);
    }
    atomic_write_text(path, j.dump(2) + "\n");
}

Image load_image(const DatasetImage& rec) {
    if (!rec.pixels.empty()) {
        Image img(rec.width, rec.height);
        for (std::size_t i = 0; i < rec.pixels.size(); ++i) img.data[i] = rec.pixels[i] / 255.0;
        return img;
    }
    if (rec.file_name.empty())
        throw LoadError("image " + std::to_string(rec.id) + " has neither pixels nor a path");
    Image img = read_ppm(rec.file_name);
    if (img.width != rec.width || img.height != rec.height)
        throw LoadError("image " + std::to_string(rec.id) + ": size mismatch with " +
                        rec.file_name);
    return img;
}

void RenameMap::validate() const {
    std::map<std::pair<std::string, std::string>, std::string> seen;
    for (const auto& r : rules) {
        auto key = std::make_pair(r.dataset, r.from);
        auto it = seen.find(key);
        if (it != seen.end() && it->second != r.to)
            throw UnifyError("rename map: '" + r.from + "' in dataset '" + r.dataset +
                             "' maps to both '" + it->second + "' and '" + r.to + "'");
        seen.emplace(key, r.to);
    }
}

std::string RenameMap::apply(const std::string& dataset, const std::string& name) const {
    for (const auto& r : rules)
        if (r.from == name && (r.dataset.empty() || r.dataset == dataset)) return r.to;
    return name;
}

RenameMap RenameMap::load(const std::string& path) {
    const json j = read_json(path);
    if (!j.contains("renames") || !j["renames"].is_array())
        throw LoadError(path + ": missing 'renames' array");
    RenameMap m;
    for (const auto& r : j["renames"])
        m.rules.push_back({r.value("dataset", ""), r.at("from").get<std::string>(),
                           r.at("to").get<std::string>()});
    m.validate();
    return m;
}

void RenameMap::save(const std::string& path) const {
    json j;
    j["renames"] = json::array();
    for (const auto& r : rules) {
        json jr;
        if (!r.dataset.empty()) jr["dataset"] = r.dataset;
        jr["from"] = r.from;
        jr["to"] = r.to;
        j["renames"].push_back(jr);
    }
    atomic_write_text(path, j.dump(2) + "\n");
}

DatasetStats compute_stats(const KeypointDataset& d) {
    DatasetStats s;
    DatasetStats::Row row;
    row.name = d.name;
    std::set<std::string> names;
    for (const auto& c : d.categories)
        names.insert(c.keypoint_names.begin(), c.keypoint_names.end());
    row.keypoints = static_cast<int>(names.size());
    row.classes = static_cast<int>(d.categories.size());
    row.images = static_cast<std::int64_t>(d.images.size());
    row.instances = static_cast<std::int64_t>(d.annotations.size());
    s.rows.push_back(row);
    s.total = row;
    s.total.name = "unified";
    return s;
}

KeypointDataset unify(const std::vector<KeypointDataset>& datasets, const RenameMap& renames,
                      DatasetStats* stats) {
    renames.validate();
    KeypointDataset out;
    out.name = "unified";

    if (stats) {
        stats->rows.clear();
        stats->total = {};
        stats->total.name = "unified";
    }

    std::map<std::string, int> cat_by_name;  // unified name -> unified id
    int next_cat = 1;
    std::int64_t next_img = 1, next_ann = 1;

    for (const auto& src : datasets) {
        src.validate();
        std::map<int, int> cat_remap;             // src cat id -> unified id
        std::map<int, std::vector<int>> kp_perm;  // src cat id -> slot permutation

        for (const auto& c : src.categories) {
            CategorySpec renamed = c;
            for (auto& n : renamed.keypoint_names) n = renames.apply(src.name, n);
            std::set<std::string> uniq(renamed.keypoint_names.begin(),
                                       renamed.keypoint_names.end());
            if (uniq.size() != renamed.keypoint_names.size())
                throw UnifyError("unify: renames collapse keypoint names within category '" +
                                 c.name + "' of dataset '" + src.name + "'");

            auto it = cat_by_name.find(renamed.name);
            if (it == cat_by_name.end()) {
                renamed.id = next_cat++;
                cat_by_name.emplace(renamed.name, renamed.id);
                cat_remap[c.id] = renamed.id;
                out.categories.push_back(renamed);
            } else {
                const CategorySpec& target = out.categories[static_cast<std::size_t>(it->second - 1)];
                std::set<std::string> target_set(target.keypoint_names.begin(),
                                                 target.keypoint_names.end());
                if (target_set != uniq)
                    throw UnifyError("unify: category '" + renamed.name +
                                     "' has conflicting keypoint definitions across datasets");
                // Permute later annotations into the first-seen keypoint order.
                std::vector<int> perm(renamed.keypoint_names.size());
                for (std::size_t k = 0; k < target.keypoint_names.size(); ++k) {
                    auto pos = std::find(renamed.keypoint_names.begin(), renamed.keypoint_names.end(),
                                         target.keypoint_names[k]);
                    perm[k] = static_cast<int>(pos - renamed.keypoint_names.begin());
                }
                kp_perm[c.id] = std::move(perm);
                cat_remap[c.id] = it->second;
            }
        }

        std::map<std::int64_t, std::int64_t> img_remap;
        for (const auto& im : src.images) {
            DatasetImage copy = im;
            copy.id = next_img++;
            img_remap[im.id] = copy.id;
            out.images.push_back(std::move(copy));
        }
        for (const auto& a : src.annotations) {
            Annotation copy = a;
            copy.id = next_ann++;
            copy.image_id = img_remap.at(a.image_id);
            copy.category_id = cat_remap.at(a.category_id);
            auto pit = kp_perm.find(a.category_id);
            if (pit != kp_perm.end()) {
                KeypointSet permuted;
                permuted.points.resize(a.kpts.size());
                for (std::size_t k = 0; k < a.kpts.size(); ++k)
                    permuted.points[k] =
                        a.kpts.points[static_cast<std::size_t>(pit->second[k])];
                copy.kpts = std::move(permuted);
            }
            out.annotations.push_back(std::move(copy));
        }

        if (stats) stats->rows.push_back(compute_stats(src).rows[0]);
    }

    out.validate();
    if (stats) {
        DatasetStats total_stats = compute_stats(out);
        stats->total = total_stats.rows[0];
        stats->total.name = "unified";
    }
    return out;
}

KeypointDataset standardize_orientation(const KeypointDataset& d, bool flagged) {
    if (!flagged) return d;
    for (const auto& c : d.categories)
        if (!c.swap_pairs_declared && !c.keypoint_names.empty())
            throw ConfigError("standardize_orientation: category '" + c.name +
                              "' declares no swap pairs");
    KeypointDataset out = d;
    for (auto& a : out.annotations) {
        const CategorySpec* cat = out.category(a.category_id);
        for (const auto& pr : cat->swap_pairs) {
            Keypoint& l = a.kpts.points[static_cast<std::size_t>(pr[0])];
            Keypoint& r = a.kpts.points[static_cast<std::size_t>(pr[1])];
            if (l.visible() && r.visible() && l.x > r.x) std::swap(l, r);
        }
    }
    return out;
}

KeypointDataset sample_subset(const KeypointDataset& d, std::size_t n, std::uint64_t seed) {
    if (n > d.images.size())
        throw ValidationError("sample_subset: requested more images than available");
    if (n == d.images.size()) return d;

    std::vector<std::size_t> idx(d.images.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());

    KeypointDataset out;
    out.name = d.name;
    out.categories = d.categories;
    std::set<std::int64_t> kept;
    for (std::size_t i : idx) {
        out.images.push_back(d.images[i]);
        kept.insert(d.images[i].id);
    }
    for (const auto& a : d.annotations)
        if (kept.count(a.image_id)) out.annotations.push_back(a);
    return out;
}

void hflip_sample(Image& img, std::vector<Annotation>& anns,
                  const std::vector<CategorySpec>& categories) {
    img = hflip_image(img);
    for (auto& a : anns) {
        const CategorySpec* cat = nullptr;
        for (const auto& c : categories)
            if (c.id == a.category_id) cat = &c;
        if (!cat) throw ValidationError("hflip_sample: unknown category");
        a.box = hflip_box(a.box);
        a.kpts = hflip_keypoints(a.kpts, cat->swap_map());
    }
}

namespace {

constexpr char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned int v = data[i] << 16;
        if (i + 1 < len) v |= data[i + 1] << 8;
        if (i + 2 < len) v |= data[i + 2];
        out.push_back(kB64Chars[(v >> 18) & 63]);
        out.push_back(kB64Chars[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64Chars[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64Chars[v & 63] : '=');
    }
    return out;
}

std::vector<unsigned char> b64_decode(const std::string& in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> out;
    int buf = 0, bits = 0;
    for (char c : in) {
        if (c == '=') break;
        const int v = val(c);
        if (v < 0) throw LoadError("invalid base64 pixel data");
        buf = (buf << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((buf >> bits) & 0xFF));
        }
    }
    return out;
}

}  // namespace

}  // namespace ppose
