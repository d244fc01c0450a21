#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "graphseg/image.hpp"

namespace graphseg {

inline void require_same_dims(const LabelMask& a, const LabelMask& b) {
    if (a.width != b.width || a.height != b.height)
        throw DimensionMismatchError("mask dimensions differ: " + std::to_string(a.width) + "x" +
                                     std::to_string(a.height) + " vs " + std::to_string(b.width) +
                                     "x" + std::to_string(b.height));
}

// Dice = 2|A∩B| / (|A|+|B|); both empty -> 1.
inline double dice(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_dims(pred, gt);
    std::size_t inter = 0, total = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
        inter += (a && b);
        total += a + b;
    }
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

// Region similarity J = |A∩B| / |A∪B|; both empty -> 1.
inline double region_j(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_dims(pred, gt);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
        inter += (a && b);
        uni += (a || b);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Mask pixels with a 4-neighbor outside the mask (image border counts as
// outside), as (x, y) pairs.
inline std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& mask) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            const bool edge = x == 0 || x == mask.width - 1 || y == 0 || y == mask.height - 1 ||
                              !mask.at(x - 1, y) || !mask.at(x + 1, y) ||
                              !mask.at(x, y - 1) || !mask.at(x, y + 1);
            if (edge) out.emplace_back(x, y);
        }
    }
    return out;
}

// DAVIS-style default: 0.8% of the image diagonal, rounded up.
inline double default_boundary_tolerance(int width, int height) {
    return std::ceil(0.008 * std::sqrt(static_cast<double>(width) * width +
                                       static_cast<double>(height) * height));
}

// Boundary F-measure: precision/recall of boundary pixels matched within
// `tolerance` (Euclidean), F = harmonic mean. Both boundaries empty -> 1,
// exactly one empty -> 0.
inline double contour_f(const BinaryMask& pred, const BinaryMask& gt, double tolerance) {
    require_same_dims(pred, gt);
    const auto pb = boundary_pixels(pred);
    const auto gb = boundary_pixels(gt);
    if (pb.empty() && gb.empty()) return 1.0;
    if (pb.empty() || gb.empty()) return 0.0;

    // Match via a disc stamp over an occupancy grid of the other set.
    const double tol2 = tolerance * tolerance;
    const int r = static_cast<int>(std::floor(tolerance));
    std::vector<std::pair<int, int>> disc;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= tol2) disc.emplace_back(dx, dy);

    auto matched_fraction = [&](const std::vector<std::pair<int, int>>& from,
                                const std::vector<std::pair<int, int>>& to) {
        std::vector<std::uint8_t> grid(static_cast<std::size_t>(pred.width) * pred.height, 0);
        for (const auto& [x, y] : to) grid[static_cast<std::size_t>(y) * pred.width + x] = 1;
        std::size_t hit = 0;
        for (const auto& [x, y] : from) {
            bool found = false;
            for (const auto& [dx, dy] : disc) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || nx >= pred.width || ny < 0 || ny >= pred.height) continue;
                if (grid[static_cast<std::size_t>(ny) * pred.width + nx]) {
                    found = true;
                    break;
                }
            }
            hit += found;
        }
        return static_cast<double>(hit) / static_cast<double>(from.size());
    };

    const double precision = matched_fraction(pb, gb);
    const double recall = matched_fraction(gb, pb);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

struct ClassMetrics {
    double j = 0.0;
    double f = 0.0;
    double dice = 0.0;
    bool absent_in_both = false;  // counted as 1.0 by convention, flagged
};

struct MetricReport {
    std::map<int, ClassMetrics> per_class;
    double mean_j = 0.0;
    double mean_f = 0.0;
    double mean_dice = 0.0;
    double j_and_f = 0.0;  // (mean_j + mean_f) / 2
    int sample_count = 0;  // evaluated class entries
};

inline BinaryMask class_binary(const LabelMask& labels, int cls) {
    BinaryMask out(labels.width, labels.height, 0);
    for (std::size_t i = 0; i < labels.data.size(); ++i)
        out.data[i] = labels.data[i] == cls ? 1 : 0;
    return out;
}

// Per non-background class J, F, Dice plus macro means over `classes`.
inline MetricReport evaluate_image(const LabelMask& fused, const LabelMask& gt,
                                   const std::vector<int>& classes,
                                   double boundary_tolerance = -1.0) {
    require_same_dims(fused, gt);
    if (classes.empty()) throw MetricError("evaluate_image needs at least one class");
    const double tol = boundary_tolerance > 0 ? boundary_tolerance
                                              : default_boundary_tolerance(fused.width, fused.height);
    MetricReport report;
    double sj = 0, sf = 0, sd = 0;
    for (int cls : classes) {
        const auto pm = class_binary(fused, cls);
        const auto gm = class_binary(gt, cls);
        ClassMetrics m;
        m.j = region_j(pm, gm);
        m.f = contour_f(pm, gm, tol);
        m.dice = dice(pm, gm);
        m.absent_in_both = pm.count_nonzero() == 0 && gm.count_nonzero() == 0;
        report.per_class[cls] = m;
        sj += m.j;
        sf += m.f;
        sd += m.dice;
    }
    const double n = static_cast<double>(classes.size());
    report.mean_j = sj / n;
    report.mean_f = sf / n;
    report.mean_dice = sd / n;
    report.j_and_f = (report.mean_j + report.mean_f) / 2.0;
    report.sample_count = static_cast<int>(classes.size());
    return report;
}

}  // namespace graphseg
