#include "ppose/synth.hpp"

#include <cmath>
#include <filesystem>

namespace ppose {

namespace {

SynthTemplate make_biped() {
    SynthTemplate t;
    t.name = "biped";
    t.keypoint_names = {"head",       "neck",        "left shoulder", "right shoulder",
                        "left elbow", "right elbow", "left hand",     "right hand",
                        "hip",        "left knee",   "right knee",    "left foot",
                        "right foot"};
    t.rest_pose = {{0.50, 0.08}, {0.50, 0.24}, {0.30, 0.28}, {0.70, 0.28}, {0.22, 0.46},
                   {0.78, 0.46}, {0.18, 0.62}, {0.82, 0.62}, {0.50, 0.58}, {0.36, 0.78},
                   {0.64, 0.78}, {0.34, 0.97}, {0.66, 0.97}};
    t.skeleton = {{0, 1}, {1, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 6},
                  {5, 7}, {1, 8}, {8, 9}, {8, 10}, {9, 11}, {10, 12}};
    t.swap_pairs = {{2, 3}, {4, 5}, {6, 7}, {9, 10}, {11, 12}};
    return t;
}

SynthTemplate make_quadruped() {
    SynthTemplate t;
    t.name = "quadruped";
    t.keypoint_names = {"head",           "neck",           "tail base",      "tail tip",
                        "left front knee", "left front paw", "right front knee",
                        "right front paw", "left hind knee", "left hind paw",
                        "right hind knee", "right hind paw"};
    t.rest_pose = {{0.10, 0.28}, {0.25, 0.34}, {0.82, 0.34}, {0.97, 0.22},
                   {0.28, 0.62}, {0.26, 0.92}, {0.40, 0.62}, {0.38, 0.92},
                   {0.72, 0.62}, {0.70, 0.92}, {0.84, 0.62}, {0.82, 0.92}};
    t.skeleton = {{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 5}, {1, 6},
                  {6, 7}, {2, 8}, {8, 9}, {2, 10}, {10, 11}};
    t.swap_pairs = {{4, 6}, {5, 7}, {8, 10}, {9, 11}};
    return t;
}

SynthTemplate make_chair() {
    SynthTemplate t;
    t.name = "chair";
    t.keypoint_names = {"left back top",    "right back top",   "left seat back",
                        "right seat back",  "left seat front",  "right seat front",
                        "left back leg",    "right back leg",   "left front leg",
                        "right front leg"};
    t.rest_pose = {{0.22, 0.05}, {0.78, 0.05}, {0.22, 0.42}, {0.78, 0.42}, {0.10, 0.55},
                   {0.90, 0.55}, {0.24, 0.95}, {0.76, 0.95}, {0.10, 0.97}, {0.90, 0.97}};
    t.skeleton = {{0, 2}, {1, 3}, {0, 1}, {2, 3}, {2, 4}, {3, 5},
                  {4, 5}, {2, 6}, {3, 7}, {4, 8}, {5, 9}};
    t.swap_pairs = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    return t;
}

const Rgb kPalette[] = {
    {0.85, 0.30, 0.25}, {0.25, 0.55, 0.85}, {0.30, 0.75, 0.35}, {0.85, 0.65, 0.20},
    {0.60, 0.35, 0.75}, {0.20, 0.70, 0.70}, {0.85, 0.45, 0.65}, {0.55, 0.55, 0.30},
};

}  // namespace

const std::vector<SynthTemplate>& builtin_templates() {
    static const std::vector<SynthTemplate> t = {make_biped(), make_quadruped(), make_chair()};
    return t;
}

const SynthTemplate& template_by_name(const std::string& name) {
    for (const auto& t : builtin_templates())
        if (t.name == name) return t;
    throw ConfigError("unknown template '" + name + "'");
}

SynthScene synth_scene(std::mt19937_64& rng, int n_objects,
                       const std::vector<SynthTemplate>& templates, const SynthConfig& cfg) {
    if (n_objects < 1) throw ValidationError("synth_scene: n_objects must be >= 1");
    if (templates.empty()) throw ConfigError("synth_scene: no templates");

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_tpl(0, templates.size() - 1);

    SynthScene scene;
    const double bg = 0.92;
    scene.image = Image(cfg.width, cfg.height, {bg, bg, bg});
    std::vector<int> owner(static_cast<std::size_t>(cfg.width) * cfg.height, -1);

    struct Placed {
        const SynthTemplate* tpl;
        std::vector<std::array<double, 2>> joints;  // normalized image coords
        Box box;
        double radius;  // limb half-thickness, normalized
        Rgb color;
    };
    std::vector<Placed> figures;

    for (int obj = 0; obj < n_objects; ++obj) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
            const SynthTemplate& tpl = templates[pick_tpl(rng)];
            const double scale = cfg.min_scale + (cfg.max_scale - cfg.min_scale) * u01(rng);
            const double radius = 0.035 * scale / 0.4;
            const double margin = scale / 2 + radius;
            const double cx = margin + (1.0 - 2 * margin) * u01(rng);
            const double cy = margin + (1.0 - 2 * margin) * u01(rng);

            Placed fig;
            fig.tpl = &tpl;
            fig.radius = radius;
            fig.color = kPalette[(static_cast<std::size_t>(obj) * templates.size() +
                                  (&tpl - templates.data())) %
                                 (sizeof(kPalette) / sizeof(kPalette[0]))];
            double minx = 1.0, miny = 1.0, maxx = 0.0, maxy = 0.0;
            for (const auto& rp : tpl.rest_pose) {
                // Joints are snapped up front: the raster, the annotations
                // and any oracle all see the same coordinates.
                const double jx = snap_coord(std::clamp(
                    cx + (rp[0] - 0.5 + cfg.jitter * (2 * u01(rng) - 1)) * scale, 0.0, 1.0));
                const double jy = snap_coord(std::clamp(
                    cy + (rp[1] - 0.5 + cfg.jitter * (2 * u01(rng) - 1)) * scale, 0.0, 1.0));
                fig.joints.push_back({jx, jy});
                minx = std::min(minx, jx);
                maxx = std::max(maxx, jx);
                miny = std::min(miny, jy);
                maxy = std::max(maxy, jy);
            }
            fig.box = box_from_xyxy({snap_coord(std::max(0.0, minx - radius)),
                                     snap_coord(std::max(0.0, miny - radius)),
                                     snap_coord(std::min(1.0, maxx + radius)),
                                     snap_coord(std::min(1.0, maxy + radius))});

            bool ok = true;
            for (const auto& other : figures)
                if (box_iou(fig.box, other.box) > cfg.max_overlap) ok = false;
            if (!ok) continue;
            figures.push_back(std::move(fig));
            placed = true;
        }
        if (!placed)
            throw GenerationError("synth_scene: placement failed after " +
                                  std::to_string(cfg.max_attempts) + " rejections");
    }

    // Draw back-to-front; the owner buffer records the topmost figure.
    for (std::size_t f = 0; f < figures.size(); ++f) {
        const Placed& fig = figures[f];
        const double rpx = fig.radius * scene.image.width;
        for (const auto& seg : fig.tpl->skeleton)
            fill_capsule(scene.image,
                         fig.joints[static_cast<std::size_t>(seg[0])][0] * scene.image.width,
                         fig.joints[static_cast<std::size_t>(seg[0])][1] * scene.image.height,
                         fig.joints[static_cast<std::size_t>(seg[1])][0] * scene.image.width,
                         fig.joints[static_cast<std::size_t>(seg[1])][1] * scene.image.height,
                         rpx, fig.color, &owner, static_cast<int>(f));
        // A slightly larger head marker keeps the first joint visible.
        fill_circle(scene.image, fig.joints[0][0] * scene.image.width,
                    fig.joints[0][1] * scene.image.height, rpx * 1.5, fig.color, &owner,
                    static_cast<int>(f));
    }

    scene.owner = owner;
    for (std::size_t f = 0; f < figures.size(); ++f) {
        scene.limb_radius.push_back(figures[f].radius);
        const Placed& fig = figures[f];
        Annotation a;
        a.id = static_cast<std::int64_t>(f + 1);
        a.image_id = 1;
        a.category_id = static_cast<int>(fig.tpl - templates.data()) + 1;
        a.box = fig.box;
        for (const auto& j : fig.joints) {
            Keypoint p;
            p.x = j[0];
            p.y = j[1];
            const int px = std::clamp(static_cast<int>(p.x * scene.image.width), 0,
                                      scene.image.width - 1);
            const int py = std::clamp(static_cast<int>(p.y * scene.image.height), 0,
                                      scene.image.height - 1);
            const int top = owner[static_cast<std::size_t>(py) * scene.image.width + px];
            p.v = (top > static_cast<int>(f)) ? Visibility::invisible : Visibility::visible;
            a.kpts.points.push_back(p);
        }
        scene.anns.push_back(std::move(a));
    }
    return scene;
}

SynthResult synth_dataset(std::uint64_t seed, int n_images, int min_objects, int max_objects,
                          const std::vector<SynthTemplate>& templates, const SynthConfig& cfg) {
    if (n_images < 1) throw ValidationError("synth_dataset: n_images must be >= 1");
    if (min_objects < 1 || max_objects < min_objects)
        throw ValidationError("synth_dataset: bad object count range");

    SynthResult out;
    out.dataset.name = "synthetic";
    for (std::size_t i = 0; i < templates.size(); ++i) {
        CategorySpec c;
        c.id = static_cast<int>(i) + 1;
        c.name = templates[i].name;
        c.keypoint_names = templates[i].keypoint_names;
        c.swap_pairs = templates[i].swap_pairs;
        c.swap_pairs_declared = true;
        c.skeleton = templates[i].skeleton;
        out.dataset.categories.push_back(std::move(c));
    }

    std::mt19937_64 rng(seed);
    std::int64_t next_ann = 1;
    for (int i = 0; i < n_images; ++i) {
        std::uniform_int_distribution<int> n_obj(min_objects, max_objects);
        SynthScene scene = synth_scene(rng, n_obj(rng), templates, cfg);
        DatasetImage im;
        im.id = i + 1;
        im.width = cfg.width;
        im.height = cfg.height;
        out.dataset.images.push_back(im);
        for (Annotation a : scene.anns) {
            a.id = next_ann++;
            a.image_id = i + 1;
            out.dataset.annotations.push_back(std::move(a));
        }
        out.images.push_back(std::move(scene.image));
    }
    out.dataset.validate();
    return out;
}

void attach_image_files(KeypointDataset& d, const std::vector<Image>& images,
                        const std::string& dir) {
    if (d.images.size() != images.size())
        throw ValidationError("attach_image_files: image count mismatch");
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%06lld.ppm",
                      static_cast<long long>(d.images[i].id));
        const std::string path = dir + "/" + name;
        write_ppm(images[i], path);
        d.images[i].file_name = path;
    }
}

}  // namespace ppose
