#pragma once

#include <array>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "graphseg/image.hpp"

namespace graphseg {

// Salient image location with descriptor, from the interest-point detector.
struct InterestPoint {
    double x = 0.0;  // column
    double y = 0.0;  // row
    std::vector<double> descriptor;
    double confidence = 0.0;
};

struct DetectorConfig {
    int nms_radius = 4;                   // NR
    int min_points = 1024;                // |I|
    double confidence_threshold = 1e-4;   // SPT

    static constexpr int kNmsMin = 2, kNmsMax = 6;
    static constexpr int kMinPointsMin = 512, kMinPointsMax = 2048;
    static constexpr double kThresholdMin = 1e-4, kThresholdMax = 5e-4;

    void validate_ranges() const {
        if (nms_radius < kNmsMin || nms_radius > kNmsMax)
            throw ConfigError("detector.nms_radius out of range [2,6]: " + std::to_string(nms_radius));
        if (min_points < kMinPointsMin || min_points > kMinPointsMax)
            throw ConfigError("detector.min_points out of range [512,2048]: " + std::to_string(min_points));
        if (confidence_threshold < kThresholdMin || confidence_threshold > kThresholdMax)
            throw ConfigError("detector.confidence_threshold out of range [1e-4,5e-4]");
    }
};

// Three candidate masks plus quality scores, as a promptable segmenter
// returns for one prompt.
struct MaskTriplet {
    std::array<BinaryMask, 3> masks;
    std::array<double, 3> scores = {0.0, 0.0, 0.0};
};

struct Box {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    bool valid() const { return x_min <= x_max && y_min <= y_max; }
};

// One class's prompt payload for a segmenter call.
struct ClassPrompt {
    int class_id = 0;
    std::vector<std::array<double, 2>> points;  // (x, y)
    std::vector<std::uint8_t> foreground;       // per-point flag, 1 = positive
    std::optional<Box> box;
};

class InterestPointDetector {
public:
    virtual ~InterestPointDetector() = default;
    virtual std::string name() const = 0;
    virtual int descriptor_dim() const = 0;
    virtual std::vector<InterestPoint> detect(const Image& image, const DetectorConfig& cfg,
                                              std::uint64_t seed) const = 0;
    virtual bool concurrent_safe() const { return true; }
};

class TextLogitProvider {
public:
    virtual ~TextLogitProvider() = default;
    virtual std::string name() const = 0;
    virtual LogitMap logit_map(const Image& image, const std::string& prompt) const = 0;
    virtual bool concurrent_safe() const { return true; }
};

class PromptableSegmenter {
public:
    virtual ~PromptableSegmenter() = default;
    virtual std::string name() const = 0;
    // One triplet per prompted class; classes with neither points nor box are
    // skipped by the caller and never reach the backend.
    virtual std::map<int, MaskTriplet> segment(const Image& image,
                                               const std::vector<ClassPrompt>& prompts) const = 0;
    virtual bool concurrent_safe() const { return true; }
};

// The set a pipeline run holds. Instances are immutable after construction
// and may be shared across workers when the adapters declare themselves
// concurrent-safe.
struct Backends {
    std::shared_ptr<const InterestPointDetector> detector;
    std::shared_ptr<const TextLogitProvider> logits;
    std::shared_ptr<const PromptableSegmenter> segmenter;
};

// Plugin registry keyed by backend name. Mock backends self-register (see
// mock_backends.hpp); real adapters can be added by linking a TU that calls
// the register_* functions. Factories receive the backend's JSON options.
class BackendRegistry {
public:
    using DetectorFactory = std::function<std::shared_ptr<InterestPointDetector>(const nlohmann::json&)>;
    using LogitFactory = std::function<std::shared_ptr<TextLogitProvider>(const nlohmann::json&)>;
    using SegmenterFactory = std::function<std::shared_ptr<PromptableSegmenter>(const nlohmann::json&)>;

    static BackendRegistry& instance() {
        static BackendRegistry reg;
        return reg;
    }

    void register_detector(const std::string& name, DetectorFactory f) { detectors_[name] = std::move(f); }
    void register_logits(const std::string& name, LogitFactory f) { logits_[name] = std::move(f); }
    void register_segmenter(const std::string& name, SegmenterFactory f) { segmenters_[name] = std::move(f); }

    std::shared_ptr<InterestPointDetector> make_detector(const std::string& name, const nlohmann::json& opts) const {
        auto it = detectors_.find(name);
        if (it == detectors_.end()) throw ConfigError("unknown detector backend '" + name + "'" + known(detectors_));
        return it->second(opts);
    }
    std::shared_ptr<TextLogitProvider> make_logits(const std::string& name, const nlohmann::json& opts) const {
        auto it = logits_.find(name);
        if (it == logits_.end()) throw ConfigError("unknown logit backend '" + name + "'" + known(logits_));
        return it->second(opts);
    }
    std::shared_ptr<PromptableSegmenter> make_segmenter(const std::string& name, const nlohmann::json& opts) const {
        auto it = segmenters_.find(name);
        if (it == segmenters_.end()) throw ConfigError("unknown segmenter backend '" + name + "'" + known(segmenters_));
        return it->second(opts);
    }

    // Real adapters resolve model files against this directory.
    static std::string weights_dir() {
        const char* v = std::getenv("GRAPHSEG_WEIGHTS_DIR");
        return v ? v : "";
    }

private:
    template <typename M>
    static std::string known(const M& m) {
        std::string s = "; registered:";
        for (const auto& [k, _] : m) s += " " + k;
        return s;
    }
    std::map<std::string, DetectorFactory> detectors_;
    std::map<std::string, LogitFactory> logits_;
    std::map<std::string, SegmenterFactory> segmenters_;
};

}  // namespace graphseg
