#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "graphseg/backends.hpp"
#include "graphseg/prompt_engine.hpp"

namespace graphseg {

struct SegmentationResult {
    struct ClassMask {
        BinaryMask mask;
        double score = 0.0;
        bool failed = false;
    };
    std::map<int, ClassMask> per_class;
    LabelMask fused;
    std::string backend_name;
    std::uint64_t prompt_config_hash = 0;
    double segment_seconds = 0.0;
};

// Mask at the argmax score; ties to the lower index.
inline std::pair<BinaryMask, double> select_best_mask(const MaskTriplet& triplet) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
        if (triplet.scores[i] > triplet.scores[best]) best = i;
    return {triplet.masks[best], triplet.scores[best]};
}

// Paints masks in descending area order so smaller masks overwrite larger
// ones; equal areas ordered by ascending class id. Unclaimed pixels keep the
// background label.
inline LabelMask fuse_masks(const std::map<int, BinaryMask>& per_class, int background_class = 0) {
    if (per_class.empty()) throw SegmentationError("fuse_masks needs at least one mask");
    const auto& first = per_class.begin()->second;
    for (const auto& [cls, mask] : per_class)
        if (mask.width != first.width || mask.height != first.height)
            throw DimensionMismatchError("per-class masks disagree on dimensions");

    struct Entry {
        std::size_t area;
        int cls;
        const BinaryMask* mask;
    };
    std::vector<Entry> order;
    order.reserve(per_class.size());
    for (const auto& [cls, mask] : per_class) order.push_back({mask.count_nonzero(), cls, &mask});
    std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
        if (a.area != b.area) return a.area > b.area;
        return a.cls < b.cls;
    });

    LabelMask fused(first.width, first.height, static_cast<std::uint8_t>(background_class));
    for (const auto& e : order)
        for (std::size_t i = 0; i < e.mask->data.size(); ++i)
            if (e.mask->data[i]) fused.data[i] = static_cast<std::uint8_t>(e.cls);
    return fused;
}

// Per present class: call the backend with the prompt components the config's
// SP dictates, keep the best mask of each triplet, fuse. A failing class is
// recorded with an empty mask; the run only fails when every class does.
inline SegmentationResult run_segmentation(const Image& image, const PromptSet& prompts,
                                           const PromptableSegmenter& backend,
                                           int background_class = 0) {
    StopWatch watch;
    std::vector<ClassPrompt> requests;
    const bool want_points = prompts.config.prompt_type != PromptType::box;
    const bool want_box = prompts.config.prompt_type != PromptType::point;
    for (int c = 0; c < prompts.num_classes; ++c) {
        if (!prompts.class_presence[c]) continue;
        ClassPrompt cp;
        cp.class_id = c;
        if (want_points)
            for (int i = 0; i < prompts.point_counts[c]; ++i) {
                cp.points.push_back(prompts.point(c, i));
                cp.foreground.push_back(1);
            }
        if (want_box && prompts.has_box[c]) cp.box = prompts.box(c);
        if (cp.points.empty() && !cp.box) continue;
        requests.push_back(std::move(cp));
    }
    if (requests.empty()) throw SegmentationError("no prompted classes to segment");

    SegmentationResult result;
    result.backend_name = backend.name();

    std::map<int, BinaryMask> fused_inputs;
    int failures = 0;
    for (const auto& request : requests) {
        SegmentationResult::ClassMask entry;
        try {
            const auto triplets = backend.segment(image, {request});
            const auto it = triplets.find(request.class_id);
            if (it == triplets.end()) throw SegmentationError("backend returned no triplet");
            auto [mask, score] = select_best_mask(it->second);
            entry.mask = std::move(mask);
            entry.score = score;
        } catch (const InvalidInputError&) {
            throw;  // caller-side contract violations are not per-class failures
        } catch (const std::exception&) {
            entry.mask = BinaryMask(image.width, image.height, 0);
            entry.failed = true;
            ++failures;
        }
        if (!entry.failed) fused_inputs.emplace(request.class_id, entry.mask);
        result.per_class.emplace(request.class_id, std::move(entry));
    }
    if (failures == static_cast<int>(requests.size()))
        throw SegmentationError("segmenter backend failed for every prompted class");

    result.fused = fuse_masks(fused_inputs, background_class);
    result.segment_seconds = watch.seconds();
    return result;
}

}  // namespace graphseg
