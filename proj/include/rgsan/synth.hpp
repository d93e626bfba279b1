#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rgsan/json_io.hpp"
#include "rgsan/rng.hpp"
#include "rgsan/scene.hpp"
#include "rgsan/text.hpp"

namespace rgsan {

struct IntRange {
    int lo = 0;
    int hi = 0;
};

struct SynthConfig {
    std::uint64_t seed = 0;
    std::array<double, 3> room_size{6.0, 6.0, 3.0};
    IntRange n_instances{3, 5};
    std::vector<std::string> classes{"chair", "table", "desk", "sofa", "lamp", "bed"};
    IntRange points_per_instance{60, 110};
    double distractor_prob = 1.0;

    void validate() const {
        for (double s : room_size)
            if (!(s > 0)) throw std::invalid_argument("room_size must be positive");
        if (n_instances.lo < 2 || n_instances.hi < n_instances.lo)
            throw std::invalid_argument("n_instances range must be at least [2, lo]");
        if (classes.size() < 2) throw std::invalid_argument("need at least two classes");
        if (points_per_instance.lo < 4 || points_per_instance.hi < points_per_instance.lo)
            throw std::invalid_argument("bad points_per_instance range");
        if (distractor_prob < 0 || distractor_prob > 1)
            throw std::invalid_argument("distractor_prob must be in [0,1]");
    }
};

inline json synth_config_to_json(const SynthConfig& c) {
    return json{{"seed", c.seed},
                {"room_size", c.room_size},
                {"n_instances", {c.n_instances.lo, c.n_instances.hi}},
                {"classes", c.classes},
                {"points_per_instance", {c.points_per_instance.lo, c.points_per_instance.hi}},
                {"distractor_prob", c.distractor_prob}};
}

inline SynthConfig synth_config_from_json(const json& j, const std::string& where = "synth config") {
    SynthConfig c;
    c.seed = require_field(j, "seed", where).get<std::uint64_t>();
    if (j.contains("room_size")) c.room_size = j["room_size"].get<std::array<double, 3>>();
    if (j.contains("n_instances")) {
        auto v = j["n_instances"].get<std::vector<int>>();
        if (v.size() != 2) throw SchemaError(where + ": n_instances must be [lo, hi]");
        c.n_instances = {v[0], v[1]};
    }
    if (j.contains("classes")) c.classes = j["classes"].get<std::vector<std::string>>();
    if (j.contains("points_per_instance")) {
        auto v = j["points_per_instance"].get<std::vector<int>>();
        if (v.size() != 2) throw SchemaError(where + ": points_per_instance must be [lo, hi]");
        c.points_per_instance = {v[0], v[1]};
    }
    if (j.contains("distractor_prob")) c.distractor_prob = j["distractor_prob"].get<double>();
    c.validate();
    return c;
}

namespace detail {

struct ClassSpec {
    std::array<double, 3> size;   // w, d, h in meters
    std::array<double, 3> color;  // base RGB in [0,1]
};

inline const std::map<std::string, ClassSpec>& class_specs() {
    static const std::map<std::string, ClassSpec> specs{
        {"chair", {{0.55, 0.55, 0.95}, {0.85, 0.25, 0.20}}},
        {"table", {{1.30, 0.80, 0.75}, {0.55, 0.35, 0.15}}},
        {"desk", {{1.40, 0.70, 0.78}, {0.25, 0.25, 0.30}}},
        {"sofa", {{1.80, 0.90, 0.85}, {0.20, 0.45, 0.70}}},
        {"lamp", {{0.35, 0.35, 1.50}, {0.92, 0.85, 0.30}}},
        {"bed", {{2.00, 1.60, 0.60}, {0.30, 0.70, 0.35}}},
        {"shelf", {{1.00, 0.40, 1.80}, {0.60, 0.60, 0.60}}},
        {"plant", {{0.45, 0.45, 1.10}, {0.10, 0.55, 0.15}}},
    };
    return specs;
}

inline ClassSpec spec_for(const std::string& cls) {
    auto it = class_specs().find(cls);
    if (it != class_specs().end()) return it->second;
    // Unknown class names get a deterministic pseudo-spec from the name hash.
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : cls) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
    Rng rng(h);
    return ClassSpec{{rng.uniform(0.4, 1.6), rng.uniform(0.4, 1.2), rng.uniform(0.5, 1.5)},
                     {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}};
}

struct PlacedBox {
    std::string cls;
    std::array<double, 3> center;  // box center (z at half height)
    std::array<double, 3> size;
};

inline bool boxes_overlap_xy(const PlacedBox& a, const PlacedBox& b, double gap) {
    return std::abs(a.center[0] - b.center[0]) < (a.size[0] + b.size[0]) / 2 + gap &&
           std::abs(a.center[1] - b.center[1]) < (a.size[1] + b.size[1]) / 2 + gap;
}

inline double dist_xy(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1];
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

/// A scene plus the list of placed boxes (centers drive the spatial
/// predicates the expression generator uses).
struct SynthScene {
    PointCloudScene scene;
    std::vector<detail::PlacedBox> boxes;
};

/// Box-shaped instances with class-colored noisy points and a floor layer of
/// background points. With-distractor scenes repeat the first class once.
/// Everything is a pure function of (config, sample_index).
inline SynthScene generate_scene_impl(const SynthConfig& config, Rng& rng, bool force_distractor) {
    config.validate();
    const int n_base = rng.uniform_int(config.n_instances.lo, config.n_instances.hi);

    // Class line-up: target class first, optionally duplicated as distractor;
    // the rest drawn without immediate repetition.
    std::vector<std::string> lineup;
    const std::string target_cls = config.classes[rng.uniform_int(0, config.classes.size() - 1)];
    lineup.push_back(target_cls);
    if (force_distractor) lineup.push_back(target_cls);
    while (static_cast<int>(lineup.size()) < n_base + (force_distractor ? 1 : 0)) {
        const auto& cls = config.classes[rng.uniform_int(0, config.classes.size() - 1)];
        if (!force_distractor && cls == target_cls) continue;  // unique stratum: one of the class
        lineup.push_back(cls);
    }

    std::vector<detail::PlacedBox> boxes;
    for (const auto& cls : lineup) {
        auto spec = detail::spec_for(cls);
        detail::PlacedBox box;
        box.cls = cls;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            for (int c = 0; c < 3; ++c) box.size[c] = spec.size[c] * rng.uniform(0.85, 1.15);
            // Centers snap to a coarse lattice so spatial arrangements recur
            // across scenes; points inside the boxes stay fully random.
            const double step = 0.75;
            auto snap = [&](double lo, double hi) {
                const double v = rng.uniform(lo, hi);
                return std::clamp(std::round(v / step) * step, lo, hi);
            };
            box.center = {snap(box.size[0] / 2 + 0.1, config.room_size[0] - box.size[0] / 2 - 0.1),
                          snap(box.size[1] / 2 + 0.1, config.room_size[1] - box.size[1] / 2 - 0.1),
                          box.size[2] / 2};
            placed = true;
            for (const auto& other : boxes)
                if (detail::boxes_overlap_xy(box, other, 0.15)) {
                    placed = false;
                    break;
                }
        }
        if (!placed) throw std::runtime_error("could not place instances without overlap");
        boxes.push_back(box);
    }

    SynthScene out;
    out.boxes = boxes;
    auto& scene = out.scene;

    std::vector<std::array<double, 6>> rows;  // x y z r g b
    std::vector<int> ids;
    const double noise = 0.06;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
        const auto spec = detail::spec_for(boxes[b].cls);
        const int n_pts = rng.uniform_int(config.points_per_instance.lo, config.points_per_instance.hi);
        for (int p = 0; p < n_pts; ++p) {
            std::array<double, 6> row;
            for (int c = 0; c < 3; ++c)
                row[c] = boxes[b].center[c] + rng.uniform(-0.5, 0.5) * boxes[b].size[c];
            for (int c = 0; c < 3; ++c)
                row[3 + c] = std::clamp(spec.color[c] + rng.uniform(-noise, noise), 0.0, 1.0);
            rows.push_back(row);
            ids.push_back(static_cast<int>(b));
        }
    }
    const int n_floor = (config.points_per_instance.lo + config.points_per_instance.hi) / 2;
    for (int p = 0; p < n_floor; ++p) {
        std::array<double, 6> row;
        row[0] = rng.uniform(0, config.room_size[0]);
        row[1] = rng.uniform(0, config.room_size[1]);
        row[2] = rng.uniform(0, 0.02);
        for (int c = 0; c < 3; ++c) row[3 + c] = std::clamp(0.5 + rng.uniform(-noise, noise), 0.0, 1.0);
        rows.push_back(row);
        ids.push_back(-1);
    }

    scene.positions = Matrix<double>(rows.size(), 3);
    scene.features = Matrix<double>(rows.size(), 3);
    for (std::size_t p = 0; p < rows.size(); ++p) {
        for (int c = 0; c < 3; ++c) {
            scene.positions(p, c) = rows[p][c];
            scene.features(p, c) = rows[p][3 + c];
        }
    }
    scene.instance_ids = std::move(ids);
    for (const auto& b : boxes) scene.instance_classes.push_back(b.cls);
    scene.validate();
    return out;
}

inline PointCloudScene generate_scene(const SynthConfig& config) {
    Rng rng(config.seed);
    auto s = generate_scene_impl(config, rng, config.distractor_prob > 0.5);
    s.scene.scene_id = "synth-" + std::to_string(config.seed);
    return s.scene;
}

struct ReferringSample {
    std::string sample_id;
    PointCloudScene scene;
    std::vector<std::string> expression;
    DependencyTree tree;
    std::vector<std::uint8_t> gt_point_mask;
    std::string target_class;
    int target_instance = -1;
    int target_token_index = -1;
};

namespace detail {

enum class Relation { left_of, right_of, closest_to, farthest_from, between };

/// The relation must hold for the target with a margin, and every same-class
/// distractor must sit clearly on the other side of it, so the description
/// stays true and unambiguous under point-sampling noise.
inline bool relation_true_and_unique(Relation rel, const std::vector<PlacedBox>& boxes, int target,
                                     int anchor, int anchor2) {
    const double axis_margin = 0.50;
    const double dist_margin = 0.50;
    const auto& t = boxes[target].center;
    const auto& a = boxes[anchor].center;

    auto target_ok = [&]() -> bool {
        switch (rel) {
            case Relation::left_of: return t[0] < a[0] - axis_margin;
            case Relation::right_of: return t[0] > a[0] + axis_margin;
            case Relation::closest_to:
            case Relation::farthest_from: return true;  // pairwise check below
            case Relation::between: {
                const auto& a2 = boxes[anchor2].center;
                return dist_xy(t, a) + dist_xy(t, a2) < dist_xy(a, a2) + 0.4;
            }
        }
        return false;
    };
    auto distractor_excluded = [&](int i) -> bool {
        const auto& c = boxes[i].center;
        switch (rel) {
            case Relation::left_of: return c[0] > a[0] + axis_margin;   // clearly on the right
            case Relation::right_of: return c[0] < a[0] - axis_margin;  // clearly on the left
            case Relation::closest_to: return dist_xy(t, a) < dist_xy(c, a) - dist_margin;
            case Relation::farthest_from: return dist_xy(t, a) > dist_xy(c, a) + dist_margin;
            case Relation::between: {
                const auto& a2 = boxes[anchor2].center;
                return dist_xy(c, a) + dist_xy(c, a2) > dist_xy(a, a2) + 0.8;
            }
        }
        return false;
    };

    if (!target_ok()) return false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (static_cast<int>(i) == target) continue;
        if (boxes[i].cls != boxes[target].cls) continue;
        if (!distractor_excluded(static_cast<int>(i))) return false;
    }
    return true;
}

inline std::pair<std::string, std::string> relation_words(Relation rel) {
    switch (rel) {
        case Relation::left_of: return {"left", "of"};
        case Relation::right_of: return {"right", "of"};
        case Relation::closest_to: return {"closest", "to"};
        case Relation::farthest_from: return {"farthest", "from"};
        case Relation::between: return {"between", ""};
    }
    return {"", ""};
}

}  // namespace detail

/// Expression + tree + mask for one target instance. The dependency tree is
/// wired from the template, so rule-guided selection provably lands on the
/// target noun; tests assert that for every generated sample.
inline ReferringSample generate_expression(const SynthScene& synth, int target, Rng& rng) {
    const auto& boxes = synth.boxes;
    if (target < 0 || target >= static_cast<int>(boxes.size()))
        throw std::invalid_argument("generate_expression: no such instance");
    ReferringSample sample;
    sample.scene = synth.scene;
    sample.target_instance = target;
    sample.target_class = boxes[target].cls;

    sample.gt_point_mask.resize(synth.scene.num_points());
    for (std::size_t p = 0; p < synth.scene.num_points(); ++p)
        sample.gt_point_mask[p] = synth.scene.instance_ids[p] == target ? 1 : 0;

    int same_class = 0;
    for (const auto& b : boxes) same_class += b.cls == boxes[target].cls;

    if (same_class == 1) {
        // Unique target: class name alone identifies it.
        if (rng.uniform() < 0.5) {
            sample.expression = {"the", boxes[target].cls, "."};
            sample.tree.tokens = sample.expression;
            sample.tree.edges = {{"det", 1, 0}, {"punct", 1, 2}};
            sample.tree.root = 1;
            sample.target_token_index = 1;
        } else {
            sample.expression = {"there", "is", "a", boxes[target].cls, "."};
            sample.tree.tokens = sample.expression;
            sample.tree.edges = {{"expl", 1, 0}, {"nsubj", 1, 3}, {"det", 3, 2}, {"punct", 1, 4}};
            sample.tree.root = 1;
            sample.target_token_index = 3;
        }
        sample.tree.validate();
        return sample;
    }

    // Anchors must be unambiguous themselves: classes that occur exactly once.
    std::vector<int> anchors;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (boxes[i].cls == boxes[target].cls) continue;
        int count = 0;
        for (const auto& b : boxes) count += b.cls == boxes[i].cls;
        if (count == 1) anchors.push_back(static_cast<int>(i));
    }
    if (anchors.empty()) throw std::runtime_error("ambiguous scene: no unique anchor instance");

    using detail::Relation;
    // Axis relations first: their truth conditions are sharpest, so most
    // scenes get a left/right description and the distance relations serve
    // as fallbacks. Shuffles are deterministic to keep replay.
    std::vector<Relation> rels{Relation::left_of, Relation::right_of};
    std::vector<Relation> fallback{Relation::closest_to, Relation::farthest_from};
    for (int i = static_cast<int>(rels.size()) - 1; i > 0; --i)
        std::swap(rels[i], rels[rng.uniform_int(0, i)]);
    for (int i = static_cast<int>(fallback.size()) - 1; i > 0; --i)
        std::swap(fallback[i], fallback[rng.uniform_int(0, i)]);
    rels.insert(rels.end(), fallback.begin(), fallback.end());
    for (int i = static_cast<int>(anchors.size()) - 1; i > 0; --i)
        std::swap(anchors[i], anchors[rng.uniform_int(0, i)]);

    for (int anchor : anchors) {
        for (auto rel : rels) {
            if (!detail::relation_true_and_unique(rel, boxes, target, anchor, -1)) continue;
            const auto [w1, w2] = detail::relation_words(rel);
            sample.expression = {"the", boxes[target].cls, w1, w2, "the", boxes[anchor].cls, "."};
            sample.tree.tokens = sample.expression;
            sample.tree.edges = {{"det", 1, 0},  {"nsubj", 2, 1}, {"case", 5, 3},
                                 {"det", 5, 4},  {"nmod", 2, 5},  {"punct", 2, 6}};
            sample.tree.root = 2;
            sample.target_token_index = 1;
            sample.tree.validate();
            return sample;
        }
        // two-anchor "between" fallback
        for (int anchor2 : anchors) {
            if (anchor2 == anchor) continue;
            if (!detail::relation_true_and_unique(Relation::between, boxes, target, anchor, anchor2))
                continue;
            sample.expression = {"the", boxes[target].cls,  "between", "the", boxes[anchor].cls,
                                 "and", boxes[anchor2].cls, "."};
            sample.tree.tokens = sample.expression;
            sample.tree.edges = {{"det", 1, 0},  {"nmod", 1, 4}, {"case", 4, 2}, {"det", 4, 3},
                                 {"conj", 4, 6}, {"cc", 6, 5},   {"punct", 1, 7}};
            sample.tree.root = 1;
            sample.target_token_index = 1;
            sample.tree.validate();
            return sample;
        }
    }
    throw std::runtime_error("ambiguous scene: no uniquely identifying template applies");
}

/// Per-sample seeds split off the config seed, so samples are independent and
/// the whole set replays from (config, index range).
inline ReferringSample generate_sample(const SynthConfig& config, int index) {
    Rng base(config.seed);
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng = base.fork(static_cast<std::uint64_t>(index) * 64 + attempt + 1);
        const bool multiple = rng.uniform() < config.distractor_prob;
        try {
            auto synth = generate_scene_impl(config, rng, multiple);
            const int target = 0;  // lineup places the target class first
            auto sample = generate_expression(synth, target, rng);
            sample.sample_id = "sample_" + std::to_string(index);
            sample.scene.scene_id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(index);
            return sample;
        } catch (const std::runtime_error&) {
            // Geometry did not support a unique description; redraw.
        }
    }
    throw std::runtime_error("ambiguous scene: giving up after 64 redraws for sample " +
                             std::to_string(index));
}

inline std::vector<ReferringSample> generate_samples(const SynthConfig& config, int count) {
    std::vector<ReferringSample> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(generate_sample(config, i));
    return out;
}

// ---- dataset directory layout ----------------------------------------------

inline void write_dataset(const std::vector<ReferringSample>& samples, const std::string& dir,
                          const SynthConfig* config = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "rgsan-dataset-v1";
    manifest["count"] = samples.size();
    if (config) manifest["synth_config"] = synth_config_to_json(*config);
    json list = json::array();
    for (const auto& s : samples) {
        const std::string scene_file = s.sample_id + ".scene.json";
        const std::string tree_file = s.sample_id + ".tree.json";
        const std::string mask_file = s.sample_id + ".mask.json";
        save_scene(s.scene, (fs::path(dir) / scene_file).string());
        save_dependency_tree(s.tree, (fs::path(dir) / tree_file).string());
        json mask;
        mask["sample_id"] = s.sample_id;
        mask["gt_point_mask"] = s.gt_point_mask;
        mask["target_class"] = s.target_class;
        mask["target_instance"] = s.target_instance;
        mask["target_token_index"] = s.target_token_index;
        save_json_file((fs::path(dir) / mask_file).string(), mask);
        list.push_back({{"id", s.sample_id}, {"scene", scene_file}, {"tree", tree_file}, {"mask", mask_file}});
    }
    manifest["samples"] = std::move(list);
    save_json_file((fs::path(dir) / "manifest.json").string(), manifest, 1);
}

inline std::vector<ReferringSample> read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = (fs::path(dir) / "manifest.json").string();
    auto manifest = load_json_file(manifest_path);
    if (require_field(manifest, "format", manifest_path) != "rgsan-dataset-v1")
        throw SchemaError(manifest_path + ": unknown dataset format");
    const auto& list = require_field(manifest, "samples", manifest_path);
    if (list.size() != manifest["count"].get<std::size_t>())
        throw SchemaError(manifest_path + ": count does not match sample list");
    std::vector<ReferringSample> out;
    for (const auto& entry : list) {
        ReferringSample s;
        s.sample_id = require_field(entry, "id", manifest_path).get<std::string>();
        s.scene = load_scene((fs::path(dir) / entry["scene"].get<std::string>()).string());
        s.tree = load_dependency_tree((fs::path(dir) / entry["tree"].get<std::string>()).string());
        s.expression = s.tree.tokens;
        const auto mask_path = (fs::path(dir) / entry["mask"].get<std::string>()).string();
        auto mask = load_json_file(mask_path);
        s.gt_point_mask = require_field(mask, "gt_point_mask", mask_path).get<std::vector<std::uint8_t>>();
        s.target_class = require_field(mask, "target_class", mask_path).get<std::string>();
        s.target_instance = require_field(mask, "target_instance", mask_path).get<int>();
        s.target_token_index = require_field(mask, "target_token_index", mask_path).get<int>();
        if (s.gt_point_mask.size() != s.scene.num_points())
            throw SchemaError(mask_path + ": mask length " + std::to_string(s.gt_point_mask.size()) +
                              " does not match scene points for sample " + s.sample_id);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace rgsan
