#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "graphseg/image.hpp"
#include "graphseg/image_io.hpp"

namespace graphseg {

// ---------------------------------------------------------------------------
// Granularity levels: five nested label vocabularies over the same scenes.
// ---------------------------------------------------------------------------
struct GranularityMap {
    std::string name;
    int class_count = 0;
    std::vector<int> mapping;  // fine label -> coarse label, total over the fine vocabulary
    std::vector<std::string> class_names;
};

inline LabelMask remap_granularity(const LabelMask& mask, const GranularityMap& gmap) {
    LabelMask out(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        const auto fine = mask.data[i];
        if (fine >= gmap.mapping.size())
            throw LabelRangeError("mask label " + std::to_string(fine) + " not covered by granularity '" +
                                  gmap.name + "'");
        out.data[i] = static_cast<std::uint8_t>(gmap.mapping[fine]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic articulated-machine scenes: a 2D side view of a truck-mounted
// loading crane. Fine vocabulary of 10 parts; coarse maps mirror the five
// granularity levels (Medium/High pad the vocabulary formally).
// ---------------------------------------------------------------------------
enum FinePart : int {
    kBackground = 0,
    kBase = 1,
    kCab = 2,
    kWheelFront = 3,
    kWheelRear = 4,
    kArmLink1 = 5,
    kArmLink2 = 6,
    kArmLink3 = 7,
    kHook = 8,
    kPlatform = 9,
};
constexpr int kFinePartCount = 10;

inline const std::vector<std::string>& fine_part_names() {
    static const std::vector<std::string> names = {
        "background", "base", "cab",  "wheel_front", "wheel_rear",
        "arm_link1",  "arm_link2", "arm_link3", "hook", "platform"};
    return names;
}

// Fixed palette; parts are pairwise at least ~75 apart in RGB so the mock
// backends can separate them under per-pixel noise.
inline const std::array<std::array<std::uint8_t, 3>, kFinePartCount>& default_palette() {
    static const std::array<std::array<std::uint8_t, 3>, kFinePartCount> p = {{
        {70, 80, 95},     // background
        {200, 55, 50},    // base
        {240, 190, 40},   // cab
        {25, 25, 28},     // wheel_front
        {140, 30, 130},   // wheel_rear
        {60, 160, 70},    // arm_link1
        {50, 120, 200},   // arm_link2
        {150, 220, 230},  // arm_link3
        {255, 255, 255},  // hook
        {0, 130, 130},    // platform
    }};
    return p;
}

struct SceneSpec {
    double base_cx = 0.48, base_cy = 0.64;  // chassis center, fraction of canvas
    double base_w = 0.52, base_h = 0.12;    // fraction of canvas
    int num_links = 3;                      // 2 or 3 articulated arm links
    std::array<double, 3> link_len = {0.24, 0.20, 0.13};    // fraction of canvas height
    std::array<double, 3> link_angle = {1.75, -1.0, -0.55};  // radians; [0] absolute, rest relative
    int wheel_count = 2;
    std::array<double, 2> wheel_radius = {0.075, 0.075};    // fraction of canvas height
    std::uint64_t texture_seed = 0;
    std::array<std::array<std::uint8_t, 3>, kFinePartCount> palette = default_palette();
    double brightness = 1.0;                // per-scene lighting jitter, [0.95, 1.05]
    bool hollow_platform = false;           // platform drawn as a frame with a hole
    // Background clutter: blobs in dimmed part colors. Same chromaticity as a
    // real part (so raw descriptors confuse them) but far enough in RGB that
    // no logit color key fires. Positions and colors derive from texture_seed.
    int distractor_count = 3;
};

namespace detail {

struct LinkGeometry {
    double ax, ay;      // start joint
    double angle;       // absolute, radians
    double len, width;  // px
    double tip_x() const { return ax + len * std::cos(angle); }
    double tip_y() const { return ay - len * std::sin(angle); }  // y grows downward
    bool contains(double px, double py) const {
        const double dx = px - ax, dy = ay - py;  // flip y so angles are CCW
        const double u = dx * std::cos(angle) + dy * std::sin(angle);
        const double v = -dx * std::sin(angle) + dy * std::cos(angle);
        return u >= 0 && u <= len && std::abs(v) <= width / 2.0;
    }
};

}  // namespace detail

// Deterministic render of a spec. Every part id present in the spec appears
// in the mask; colors within a part are near-constant modulo seeded noise.
inline std::pair<Image, LabelMask> generate_scene(const SceneSpec& spec, int width, int height) {
    const double W = width, H = height;
    const double base_w = spec.base_w * W, base_h = spec.base_h * H;
    const double base_x0 = spec.base_cx * W - base_w / 2.0;
    const double base_y0 = spec.base_cy * H - base_h / 2.0;
    const double base_x1 = base_x0 + base_w, base_y1 = base_y0 + base_h;

    const double cab_w = 0.22 * base_w, cab_h = 1.7 * base_h;
    const double cab_x0 = base_x1 - cab_w, cab_y0 = base_y0 - cab_h;

    const double plat_w = 0.50 * base_w, plat_h = 0.45 * base_h;
    const double plat_x0 = base_x0, plat_y0 = base_y0 - plat_h;

    const double wheel_r[2] = {spec.wheel_radius[0] * H, spec.wheel_radius[1] * H};
    const double wheel_cy = base_y1 + 0.35 * std::max(wheel_r[0], wheel_r[1]);
    const double wheel_cx[2] = {base_x1 - cab_w / 2.0, base_x0 + 1.4 * wheel_r[1]};

    std::vector<detail::LinkGeometry> links;
    double jx = base_x0 + 0.30 * base_w, jy = plat_y0;
    double angle = 0.0;
    for (int i = 0; i < spec.num_links; ++i) {
        angle = i == 0 ? spec.link_angle[0] : angle + spec.link_angle[i];
        detail::LinkGeometry geom{jx, jy, angle, spec.link_len[i] * H, std::max(3.0, 0.045 * H)};
        links.push_back(geom);
        jx = geom.tip_x();
        jy = geom.tip_y();
    }
    const double hook_r = std::max(2.5, 0.028 * H);
    const double hook_cx = jx, hook_cy = jy + hook_r * 0.8;

    // Canvas containment check over analytic part extents.
    auto inside = [&](double x, double y) { return x >= 0 && x < W && y >= 0 && y < H; };
    bool ok = inside(base_x0, base_y0) && inside(base_x1 - 1, base_y1 - 1) &&
              inside(cab_x0, cab_y0) && inside(plat_x0, plat_y0) &&
              inside(wheel_cx[0] - wheel_r[0], wheel_cy + wheel_r[0] - 1) &&
              inside(wheel_cx[1] - wheel_r[1], wheel_cy + wheel_r[1] - 1) &&
              inside(hook_cx - hook_r, hook_cy + hook_r - 1) && inside(hook_cx + hook_r, hook_cy - hook_r);
    for (const auto& link : links) {
        ok = ok && inside(link.ax, link.ay) && inside(link.tip_x(), link.tip_y());
    }
    if (!ok) throw InvalidInputError("scene spec places parts outside the canvas");

    LabelMask mask(width, height, kBackground);
    // Distractor blobs are part of the background texture: painted into the
    // image only, never into the label mask, and parts draw over them.
    LabelMask distractor(width, height, 0);  // 0 = none, else palette source part + 1
    {
        const int sources[4] = {kBase, kCab, kArmLink1, kArmLink2};
        for (int i = 0; i < spec.distractor_count; ++i) {
            const std::uint64_t key = hash_combine(spec.texture_seed, 0xD157 + i);
            const double cx = (0.5 + hash_noise(hash_combine(key, 1), 0.45)) * width;
            const double cy = (0.5 + hash_noise(hash_combine(key, 2), 0.45)) * height;
            const double r = (0.055 + hash_noise(hash_combine(key, 3), 0.02)) * height;
            const int src = sources[i % 4];
            for (int y = std::max(0, static_cast<int>(cy - r)); y <= std::min(height - 1, static_cast<int>(cy + r)); ++y)
                for (int x = std::max(0, static_cast<int>(cx - r)); x <= std::min(width - 1, static_cast<int>(cx + r)); ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                        distractor.set(x, y, static_cast<std::uint8_t>(src + 1));
        }
    }
    auto paint_rect = [&](double x0, double y0, double x1, double y1, int label) {
        for (int y = std::max(0, static_cast<int>(y0)); y < std::min(height, static_cast<int>(std::ceil(y1))); ++y)
            for (int x = std::max(0, static_cast<int>(x0)); x < std::min(width, static_cast<int>(std::ceil(x1))); ++x)
                mask.set(x, y, static_cast<std::uint8_t>(label));
    };
    auto paint_circle = [&](double cx, double cy, double r, int label) {
        for (int y = std::max(0, static_cast<int>(cy - r)); y <= std::min(height - 1, static_cast<int>(cy + r)); ++y)
            for (int x = std::max(0, static_cast<int>(cx - r)); x <= std::min(width - 1, static_cast<int>(cx + r)); ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                    mask.set(x, y, static_cast<std::uint8_t>(label));
    };

    paint_rect(base_x0, base_y0, base_x1, base_y1, kBase);
    if (spec.hollow_platform) {
        paint_rect(plat_x0, plat_y0, plat_x0 + plat_w, base_y0, kPlatform);
        const double t = std::max(2.0, 0.18 * plat_h);
        paint_rect(plat_x0 + 2.5 * t, plat_y0 + t, plat_x0 + plat_w - 2.5 * t, base_y0 - t, kBackground);
    } else {
        paint_rect(plat_x0, plat_y0, plat_x0 + plat_w, base_y0, kPlatform);
    }
    paint_rect(cab_x0, cab_y0, base_x1, base_y0, kCab);
    paint_circle(wheel_cx[0], wheel_cy, wheel_r[0], kWheelFront);
    if (spec.wheel_count > 1) paint_circle(wheel_cx[1], wheel_cy, wheel_r[1], kWheelRear);
    for (int i = 0; i < spec.num_links; ++i) {
        const int label = kArmLink1 + i;
        const auto& link = links[i];
        const int x_lo = std::max(0, static_cast<int>(std::min(link.ax, link.tip_x()) - link.width));
        const int x_hi = std::min(width - 1, static_cast<int>(std::max(link.ax, link.tip_x()) + link.width));
        const int y_lo = std::max(0, static_cast<int>(std::min(link.ay, link.tip_y()) - link.width));
        const int y_hi = std::min(height - 1, static_cast<int>(std::max(link.ay, link.tip_y()) + link.width));
        for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x)
                if (link.contains(x, y)) mask.set(x, y, static_cast<std::uint8_t>(label));
    }
    paint_circle(hook_cx, hook_cy, hook_r, kHook);

    for (int part = 1; part < kFinePartCount; ++part) {
        if (part == kArmLink3 && spec.num_links < 3) continue;
        if (part == kWheelRear && spec.wheel_count < 2) continue;
        bool found = false;
        for (auto v : mask.data)
            if (v == part) {
                found = true;
                break;
            }
        if (!found)
            throw InvalidInputError("part '" + fine_part_names()[part] + "' fully occluded in scene spec");
    }

    Image img(width, height);
    constexpr double kDistractorDim = 0.55;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto label = mask.at(x, y);
            std::array<std::uint8_t, 3> base_color = spec.palette[label];
            double scale = spec.brightness;
            if (label == kBackground && distractor.at(x, y)) {
                base_color = spec.palette[distractor.at(x, y) - 1];
                scale *= kDistractorDim;
            }
            const std::uint64_t key = hash_combine(spec.texture_seed,
                                                   static_cast<std::uint64_t>(y) * width + x);
            std::array<std::uint8_t, 3> c;
            for (int ch = 0; ch < 3; ++ch) {
                const double noise = hash_noise(hash_combine(key, ch), 6.0);
                const double v = base_color[ch] * scale + noise;
                c[ch] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
            img.set_rgb(x, y, c);
        }
    }
    return {img, mask};
}

// Randomized spec within ranges that keep every part inside the canvas.
inline SceneSpec sample_scene_spec(Rng& rng, bool hollow_platform = false) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        SceneSpec spec;
        spec.base_cx = rng.uniform(0.44, 0.56);
        spec.base_cy = rng.uniform(0.60, 0.70);
        spec.base_w = rng.uniform(0.46, 0.58);
        spec.base_h = rng.uniform(0.10, 0.13);
        spec.num_links = 2 + static_cast<int>(rng.uniform_index(2));
        spec.link_len = {rng.uniform(0.20, 0.27), rng.uniform(0.18, 0.24), rng.uniform(0.10, 0.15)};
        spec.link_angle = {rng.uniform(1.15, 1.85), rng.uniform(-1.5, -0.6), rng.uniform(-0.9, -0.1)};
        spec.wheel_radius = {rng.uniform(0.060, 0.080), rng.uniform(0.060, 0.080)};
        spec.texture_seed = rng.next();
        spec.brightness = rng.uniform(0.95, 1.05);
        spec.hollow_platform = hollow_platform;
        try {
            generate_scene(spec, 160, 160);  // containment probe at reference scale
            return spec;
        } catch (const InvalidInputError&) {
            continue;
        }
    }
    throw PipelineError("could not sample an in-canvas scene spec");
}

inline std::vector<GranularityMap> standard_granularities() {
    std::vector<GranularityMap> maps;
    {
        GranularityMap g{"Truck", 2, std::vector<int>(kFinePartCount, 1), {"background", "truck"}};
        g.mapping[kBackground] = 0;
        maps.push_back(std::move(g));
    }
    {
        GranularityMap g{"TruckCrane", 3, std::vector<int>(kFinePartCount, 0), {"background", "truck", "crane"}};
        g.mapping = {0, 1, 1, 1, 1, 2, 2, 2, 2, 1};
        maps.push_back(std::move(g));
    }
    {
        GranularityMap g{"Low", 8, {0, 1, 2, 3, 3, 4, 5, 5, 6, 7},
                         {"background", "base", "cab", "wheel", "arm_lower", "arm_upper", "hook", "platform"}};
        maps.push_back(std::move(g));
    }
    for (const auto& [name, count] : std::vector<std::pair<std::string, int>>{{"Medium", 16}, {"High", 22}}) {
        GranularityMap g;
        g.name = name;
        g.class_count = count;
        g.mapping.resize(kFinePartCount);
        for (int i = 0; i < kFinePartCount; ++i) g.mapping[i] = i;
        g.class_names = fine_part_names();
        for (int c = kFinePartCount; c < count; ++c) g.class_names.push_back("part_" + std::to_string(c));
        maps.push_back(std::move(g));
    }
    return maps;
}

// Representative color key per non-background class name, per granularity.
inline std::map<std::string, std::map<std::string, std::array<std::uint8_t, 3>>> standard_color_keys() {
    const auto& pal = default_palette();
    std::map<std::string, std::map<std::string, std::array<std::uint8_t, 3>>> keys;
    keys["Truck"] = {{"truck", pal[kBase]}};
    keys["TruckCrane"] = {{"truck", pal[kBase]}, {"crane", pal[kArmLink1]}};
    keys["Low"] = {{"base", pal[kBase]},          {"cab", pal[kCab]},
                   {"wheel", pal[kWheelFront]},   {"arm_lower", pal[kArmLink1]},
                   {"arm_upper", pal[kArmLink2]}, {"hook", pal[kHook]},
                   {"platform", pal[kPlatform]}};
    std::map<std::string, std::array<std::uint8_t, 3>> fine_keys;
    for (int i = 1; i < kFinePartCount; ++i) fine_keys[fine_part_names()[i]] = pal[i];
    keys["Medium"] = fine_keys;
    keys["High"] = fine_keys;
    return keys;
}

// ---------------------------------------------------------------------------
// Few-shot splits and sequence protocols.
// ---------------------------------------------------------------------------
struct FewShotSplit {
    std::vector<int> support;
    std::vector<int> test;
    int fold = 0;
    std::uint64_t seed = 0;
};

// Supports are disjoint chunks of a seeded shuffle; the test set is the
// remainder, fixed across folds.
inline std::vector<FewShotSplit> sample_splits(int dataset_size, int n_support, int folds,
                                               std::uint64_t seed) {
    if (n_support < 1 || folds < 1) throw ConfigError("n_support and folds must be >= 1");
    if (n_support >= dataset_size)
        throw ConfigError("n_support " + std::to_string(n_support) + " >= dataset size " +
                          std::to_string(dataset_size));
    if (folds * n_support >= dataset_size)
        throw ConfigError("folds * n_support must leave a non-empty test remainder");
    std::vector<int> order(dataset_size);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<int> test(order.begin() + folds * n_support, order.end());
    std::sort(test.begin(), test.end());
    std::vector<FewShotSplit> splits;
    for (int f = 0; f < folds; ++f) {
        FewShotSplit s;
        s.fold = f;
        s.seed = hash_combine(seed, f);
        s.support.assign(order.begin() + f * n_support, order.begin() + (f + 1) * n_support);
        std::sort(s.support.begin(), s.support.end());
        s.test = test;
        splits.push_back(std::move(s));
    }
    return splits;
}

enum class SequenceProtocol { F, FL, FLM };

inline SequenceProtocol sequence_protocol_from_string(const std::string& s) {
    if (s == "F") return SequenceProtocol::F;
    if (s == "FL") return SequenceProtocol::FL;
    if (s == "FLM") return SequenceProtocol::FLM;
    throw ConfigError("unknown sequence protocol '" + s + "' (F, FL, FLM)");
}

// F -> {0}; FL -> {0, L-1}; FLM -> {0, (L-1)/2, L-1}; duplicates collapse.
inline std::vector<int> sequence_frames(int length, SequenceProtocol protocol) {
    if (length < 1) throw ConfigError("sequence length must be >= 1");
    std::vector<int> frames{0};
    if (protocol == SequenceProtocol::FLM) frames.push_back((length - 1) / 2);
    if (protocol != SequenceProtocol::F) frames.push_back(length - 1);
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    return frames;
}

// ---------------------------------------------------------------------------
// On-disk layout: images/NNNN.png, masks/NNNN.png (8-bit, fine labels),
// granularity.json with the five maps, class names and mock color keys.
// ---------------------------------------------------------------------------
struct DatasetMeta {
    std::vector<std::string> fine_class_names;
    std::map<std::string, GranularityMap> granularities;
    std::map<std::string, std::map<std::string, std::array<std::uint8_t, 3>>> color_keys;

    const GranularityMap& granularity(const std::string& name) const {
        auto it = granularities.find(name);
        if (it == granularities.end()) throw ConfigError("unknown granularity '" + name + "'");
        return it->second;
    }
};

class Dataset {
public:
    Dataset() = default;
    Dataset(std::string dir, DatasetMeta meta, int size)
        : dir_(std::move(dir)), meta_(std::move(meta)), size_(size) {}

    int size() const { return size_; }
    const DatasetMeta& meta() const { return meta_; }
    const std::string& dir() const { return dir_; }

    std::string image_path(int index) const { return dir_ + "/images/" + item_name(index) + ".png"; }
    std::string mask_path(int index) const { return dir_ + "/masks/" + item_name(index) + ".png"; }

    Image load_image(int index) const {
        const auto path = image_path(index);
        if (!std::filesystem::exists(path)) throw ConfigError("missing image file: " + path);
        return read_png_rgb(path);
    }
    LabelMask load_mask(int index) const {
        const auto path = mask_path(index);
        if (!std::filesystem::exists(path)) throw ConfigError("missing mask file: " + path);
        return read_png_mask(path);
    }

    static std::string item_name(int index) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d", index);
        return buf;
    }

private:
    std::string dir_;
    DatasetMeta meta_;
    int size_ = 0;
};

inline nlohmann::json meta_to_json(const DatasetMeta& meta, int count) {
    nlohmann::json j;
    j["count"] = count;
    j["fine_class_names"] = meta.fine_class_names;
    nlohmann::json gs = nlohmann::json::object();
    for (const auto& [name, g] : meta.granularities)
        gs[name] = {{"class_count", g.class_count}, {"mapping", g.mapping}, {"class_names", g.class_names}};
    j["granularities"] = gs;
    nlohmann::json ck = nlohmann::json::object();
    for (const auto& [gname, table] : meta.color_keys) {
        nlohmann::json t = nlohmann::json::object();
        for (const auto& [cls, rgb] : table) t[cls] = {rgb[0], rgb[1], rgb[2]};
        ck[gname] = t;
    }
    j["color_keys"] = ck;
    return j;
}

inline DatasetMeta meta_from_json(const nlohmann::json& j) {
    DatasetMeta meta;
    meta.fine_class_names = j.at("fine_class_names").get<std::vector<std::string>>();
    for (const auto& [name, g] : j.at("granularities").items()) {
        GranularityMap gm;
        gm.name = name;
        gm.class_count = g.at("class_count").get<int>();
        gm.mapping = g.at("mapping").get<std::vector<int>>();
        gm.class_names = g.at("class_names").get<std::vector<std::string>>();
        meta.granularities[name] = std::move(gm);
    }
    if (j.contains("color_keys"))
        for (const auto& [gname, table] : j.at("color_keys").items())
            for (const auto& [cls, rgb] : table.items())
                meta.color_keys[gname][cls] = {rgb.at(0).get<std::uint8_t>(), rgb.at(1).get<std::uint8_t>(),
                                               rgb.at(2).get<std::uint8_t>()};
    return meta;
}

inline Dataset load_dataset(const std::string& dir) {
    const auto meta_path = dir + "/granularity.json";
    std::ifstream is(meta_path);
    if (!is) throw ConfigError("missing dataset metadata: " + meta_path);
    nlohmann::json j;
    is >> j;
    const int count = j.at("count").get<int>();
    return Dataset(dir, meta_from_json(j), count);
}

// Emits `count` randomized scenes plus metadata under `dir`.
inline Dataset generate_dataset(const std::string& dir, int count, int width, int height,
                                std::uint64_t seed, bool hollow_platform = false) {
    namespace fs = std::filesystem;
    fs::create_directories(dir + "/images");
    fs::create_directories(dir + "/masks");
    DatasetMeta meta;
    meta.fine_class_names = fine_part_names();
    for (auto& g : standard_granularities()) meta.granularities[g.name] = g;
    meta.color_keys = standard_color_keys();

    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        const auto spec = sample_scene_spec(rng, hollow_platform);
        const auto [img, mask] = generate_scene(spec, width, height);
        write_png_rgb(dir + "/images/" + Dataset::item_name(i) + ".png", img);
        write_png_mask(dir + "/masks/" + Dataset::item_name(i) + ".png", mask);
    }
    std::ofstream os(dir + "/granularity.json");
    os << meta_to_json(meta, count).dump(2) << "\n";
    return Dataset(dir, meta, count);
}

}  // namespace graphseg
