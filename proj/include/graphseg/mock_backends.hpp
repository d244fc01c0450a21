#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "graphseg/backends.hpp"

namespace graphseg {

// ---------------------------------------------------------------------------
// mock-grid detector
//
// Candidate points on a jittered grid (cell = 2*NR, jitter uniform within
// +/-NR/2, keyed by seed and cell index), so no two candidates are closer
// than NR. Descriptor: 8x8 grayscale patch, mean-subtracted and
// L2-normalized, plus mean R and G chromaticity of the patch (D = 66).
// Confidence is the normalized grayscale std-dev of the patch.
// ---------------------------------------------------------------------------
class MockGridDetector final : public InterestPointDetector {
public:
    static constexpr int kPatch = 8;
    static constexpr int kDim = kPatch * kPatch + 2;

    std::string name() const override { return "mock-grid"; }
    int descriptor_dim() const override { return kDim; }

    std::vector<InterestPoint> detect(const Image& image, const DetectorConfig& cfg,
                                      std::uint64_t seed) const override {
        require_valid_image(image);
        const int nr = cfg.nms_radius;
        const int cell = nr * 2;
        const int cols = image.width / cell;
        const int rows = image.height / cell;

        std::vector<InterestPoint> candidates;
        candidates.reserve(static_cast<std::size_t>(cols) * rows);
        for (int cy = 0; cy < rows; ++cy) {
            for (int cx = 0; cx < cols; ++cx) {
                const std::uint64_t key = hash_combine(seed, static_cast<std::uint64_t>(cy) * cols + cx);
                const double jx = hash_noise(hash_combine(key, 1), nr / 2.0);
                const double jy = hash_noise(hash_combine(key, 2), nr / 2.0);
                double px = cx * cell + cell / 2.0 + jx;
                double py = cy * cell + cell / 2.0 + jy;
                px = std::clamp(px, 0.0, image.width - 1.0);
                py = std::clamp(py, 0.0, image.height - 1.0);
                candidates.push_back(make_point(image, px, py));
            }
        }

        // Threshold, escalating by halving when the point budget is missed.
        std::vector<InterestPoint> kept;
        double threshold = cfg.confidence_threshold;
        for (int attempt = 0; attempt <= 3; ++attempt) {
            kept.clear();
            for (const auto& p : candidates)
                if (p.confidence >= threshold) kept.push_back(p);
            if (static_cast<int>(kept.size()) >= cfg.min_points) return kept;
            threshold *= 0.5;
        }

        // Still short: pad with a uniform grid at NMS spacing. Padded points
        // are appended as-is; the NMS guarantee covers only the pre-padding set.
        for (int gy = 0; gy * nr < image.height; ++gy)
            for (int gx = 0; gx * nr < image.width; ++gx)
                kept.push_back(make_point(image, gx * nr, gy * nr, /*pad=*/true));
        if (kept.empty()) throw EmptyDetectionError("mock-grid produced no points even after padding");
        return kept;
    }

private:
    InterestPoint make_point(const Image& image, double px, double py, bool pad = false) const {
        InterestPoint p;
        p.x = px;
        p.y = py;
        p.descriptor.assign(kDim, 0.0);

        const int cx = static_cast<int>(std::lround(px));
        const int cy = static_cast<int>(std::lround(py));
        double grays[kPatch * kPatch];
        double mean = 0.0, rsum = 0.0, gsum = 0.0;
        int idx = 0;
        for (int dy = -kPatch / 2; dy < kPatch / 2; ++dy) {
            for (int dx = -kPatch / 2; dx < kPatch / 2; ++dx, ++idx) {
                const int sx = std::clamp(cx + dx, 0, image.width - 1);
                const int sy = std::clamp(cy + dy, 0, image.height - 1);
                const auto c = image.rgb(sx, sy);
                const double sum = static_cast<double>(c[0]) + c[1] + c[2];
                grays[idx] = sum / (3.0 * 255.0);
                mean += grays[idx];
                if (sum > 0) {
                    rsum += c[0] / sum;
                    gsum += c[1] / sum;
                }
            }
        }
        const int n = kPatch * kPatch;
        mean /= n;
        double var = 0.0, norm2 = 0.0;
        for (int i = 0; i < n; ++i) {
            grays[i] -= mean;
            var += grays[i] * grays[i];
            norm2 += grays[i] * grays[i];
        }
        var /= n;
        const double norm = std::sqrt(norm2);
        if (norm > 1e-9)
            for (int i = 0; i < n; ++i) p.descriptor[i] = grays[i] / norm;
        p.descriptor[n] = rsum / n;
        p.descriptor[n + 1] = gsum / n;
        p.confidence = pad ? 0.0 : std::clamp(std::sqrt(var) * 4.0, 1e-5, 1.0);
        return p;
    }
};

// ---------------------------------------------------------------------------
// mock-colorkey logit provider
//
// A registry maps prompt text to an RGB triple. Pixels whose color lies
// within match_tolerance of the key score +margin, everything else -margin,
// plus hash noise keyed by (seed, prompt, pixel).
// ---------------------------------------------------------------------------
struct MockLogitConfig {
    std::map<std::string, std::array<std::uint8_t, 3>> color_keys;
    double margin = 4.0;
    double noise_amplitude = 0.5;
    double match_tolerance = 40.0;
    std::uint64_t seed = 0;
};

class MockColorKeyLogits final : public TextLogitProvider {
public:
    explicit MockColorKeyLogits(MockLogitConfig cfg) : cfg_(std::move(cfg)) {}

    std::string name() const override { return "mock-colorkey"; }

    LogitMap logit_map(const Image& image, const std::string& prompt) const override {
        if (prompt.empty()) throw InvalidInputError("empty prompt");
        auto it = cfg_.color_keys.find(prompt);
        if (it == cfg_.color_keys.end()) {
            std::string known;
            for (const auto& [k, _] : cfg_.color_keys) known += " '" + k + "'";
            throw UnknownPromptError("prompt '" + prompt + "' has no registered color key; known:" + known);
        }
        const auto key_color = it->second;
        const std::uint64_t prompt_key = hash_combine(cfg_.seed, fnv1a(prompt));

        LogitMap map(image.width, image.height, prompt);
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                const bool match = color_distance(image.rgb(x, y), key_color) <= cfg_.match_tolerance;
                const double noise = hash_noise(
                    hash_combine(prompt_key, static_cast<std::uint64_t>(y) * image.width + x),
                    cfg_.noise_amplitude);
                map.set(x, y, static_cast<float>((match ? cfg_.margin : -cfg_.margin) + noise));
            }
        }
        return map;
    }

private:
    MockLogitConfig cfg_;
};

// ---------------------------------------------------------------------------
// mock-region segmenter
//
// Region-grows (4-connected) from each prompt point across pixels whose color
// stays within color_tolerance of that seed pixel, clips to the box when one
// is given, and returns (eroded, exact, dilated) variants with scores
// (0.7, 1.0, 0.8). Box-only prompts grow from the box center.
// ---------------------------------------------------------------------------
struct MockSegmenterConfig {
    double color_tolerance = 40.0;
    int morph_radius = 2;
    // A single-seed grow larger than this fraction of the image is treated as
    // a background grab and dropped from the union, mirroring how a real
    // promptable segmenter down-scores whole-scene masks.
    double max_region_fraction = 0.5;
};

class MockRegionSegmenter final : public PromptableSegmenter {
public:
    explicit MockRegionSegmenter(MockSegmenterConfig cfg = {}) : cfg_(cfg) {}

    std::string name() const override { return "mock-region"; }

    std::map<int, MaskTriplet> segment(const Image& image,
                                       const std::vector<ClassPrompt>& prompts) const override {
        require_valid_image(image);
        std::map<int, MaskTriplet> result;
        for (const auto& prompt : prompts) {
            for (const auto& pt : prompt.points)
                if (pt[0] < 0 || pt[0] >= image.width || pt[1] < 0 || pt[1] >= image.height)
                    throw InvalidInputError("prompt point outside image bounds");
            if (prompt.box && !prompt.box->valid())
                throw InvalidInputError("prompt box has inverted corners");
            if (prompt.points.empty() && !prompt.box) continue;  // skipped, not an error

            BinaryMask exact(image.width, image.height, 0);
            std::vector<std::array<double, 2>> seeds;
            for (std::size_t i = 0; i < prompt.points.size(); ++i)
                if (prompt.foreground.empty() || prompt.foreground[i]) seeds.push_back(prompt.points[i]);
            if (seeds.empty() && prompt.box)
                seeds.push_back({(prompt.box->x_min + prompt.box->x_max) / 2.0,
                                 (prompt.box->y_min + prompt.box->y_max) / 2.0});
            for (const auto& s : seeds) grow(image, prompt.box, s, exact);

            MaskTriplet triplet;
            triplet.masks[0] = morph(exact, -cfg_.morph_radius);
            triplet.masks[1] = exact;
            triplet.masks[2] = morph(exact, cfg_.morph_radius);
            triplet.scores = {0.7, 1.0, 0.8};
            result.emplace(prompt.class_id, std::move(triplet));
        }
        return result;
    }

private:
    void grow(const Image& image, const std::optional<Box>& box,
              std::array<double, 2> seed, BinaryMask& out) const {
        const int sx = std::clamp(static_cast<int>(std::lround(seed[0])), 0, image.width - 1);
        const int sy = std::clamp(static_cast<int>(std::lround(seed[1])), 0, image.height - 1);
        if (!inside_box(box, sx, sy) || out.at(sx, sy)) return;
        const auto ref = image.rgb(sx, sy);

        BinaryMask region(image.width, image.height, 0);
        std::size_t area = 0;
        std::deque<std::pair<int, int>> queue{{sx, sy}};
        region.set(sx, sy, 1);
        ++area;
        while (!queue.empty()) {
            const auto [x, y] = queue.front();
            queue.pop_front();
            constexpr int dx[4] = {1, -1, 0, 0};
            constexpr int dy[4] = {0, 0, 1, -1};
            for (int i = 0; i < 4; ++i) {
                const int nx = x + dx[i], ny = y + dy[i];
                if (!image.in_bounds(nx, ny) || !inside_box(box, nx, ny) || region.at(nx, ny)) continue;
                if (color_distance(image.rgb(nx, ny), ref) > cfg_.color_tolerance) continue;
                region.set(nx, ny, 1);
                ++area;
                queue.emplace_back(nx, ny);
            }
        }
        const auto cap = static_cast<std::size_t>(
            cfg_.max_region_fraction * image.width * image.height);
        if (area > cap) return;  // background grab
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] |= region.data[i];
    }

    static bool inside_box(const std::optional<Box>& box, int x, int y) {
        if (!box) return true;
        return x >= box->x_min && x <= box->x_max && y >= box->y_min && y <= box->y_max;
    }

    // radius > 0 dilates, radius < 0 erodes, Euclidean disc.
    static BinaryMask morph(const BinaryMask& in, int radius) {
        if (radius == 0) return in;
        const int r = std::abs(radius);
        const bool dilate = radius > 0;
        BinaryMask out(in.width, in.height, 0);
        for (int y = 0; y < in.height; ++y) {
            for (int x = 0; x < in.width; ++x) {
                bool hit = dilate ? false : true;
                for (int dy = -r; dy <= r && (dilate ? !hit : hit); ++dy) {
                    for (int dx = -r; dx <= r; ++dx) {
                        if (dx * dx + dy * dy > r * r) continue;
                        const int nx = x + dx, ny = y + dy;
                        const bool v = in.in_bounds(nx, ny) ? in.at(nx, ny) != 0 : false;
                        if (dilate && v) {
                            hit = true;
                            break;
                        }
                        if (!dilate && !v) {
                            hit = false;
                            break;
                        }
                    }
                }
                out.set(x, y, hit ? 1 : 0);
            }
        }
        return out;
    }

    MockSegmenterConfig cfg_;
};

// Registers the three mocks; runs once via the static in ensure_mock_backends.
inline void register_mock_backends(BackendRegistry& reg) {
    reg.register_detector("mock-grid", [](const nlohmann::json&) {
        return std::make_shared<MockGridDetector>();
    });
    reg.register_logits("mock-colorkey", [](const nlohmann::json& opts) {
        MockLogitConfig cfg;
        if (opts.contains("margin")) cfg.margin = opts.at("margin").get<double>();
        if (opts.contains("noise_amplitude")) cfg.noise_amplitude = opts.at("noise_amplitude").get<double>();
        if (opts.contains("match_tolerance")) cfg.match_tolerance = opts.at("match_tolerance").get<double>();
        if (opts.contains("seed")) cfg.seed = opts.at("seed").get<std::uint64_t>();
        if (opts.contains("color_keys"))
            for (const auto& [prompt, rgb] : opts.at("color_keys").items())
                cfg.color_keys[prompt] = {rgb.at(0).get<std::uint8_t>(), rgb.at(1).get<std::uint8_t>(),
                                          rgb.at(2).get<std::uint8_t>()};
        return std::make_shared<MockColorKeyLogits>(std::move(cfg));
    });
    reg.register_segmenter("mock-region", [](const nlohmann::json& opts) {
        MockSegmenterConfig cfg;
        if (opts.contains("color_tolerance")) cfg.color_tolerance = opts.at("color_tolerance").get<double>();
        if (opts.contains("morph_radius")) cfg.morph_radius = opts.at("morph_radius").get<int>();
        return std::make_shared<MockRegionSegmenter>(cfg);
    });
}

inline BackendRegistry& default_registry() {
    static const bool once = [] {
        register_mock_backends(BackendRegistry::instance());
        return true;
    }();
    (void)once;
    return BackendRegistry::instance();
}

}  // namespace graphseg
