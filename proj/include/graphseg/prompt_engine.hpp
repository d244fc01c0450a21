#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "graphseg/classifier_types.hpp"
#include "graphseg/scene_graph.hpp"

namespace graphseg {

enum class PromptStage { raw, forest_filtered, mahalanobis_filtered };

// One class's candidate point set as it moves through the filter stages.
struct ClassPointSet {
    int class_id = 0;
    PromptStage stage = PromptStage::raw;
    std::vector<std::array<double, 2>> points;
    std::vector<int> node_indices;  // provenance into the source graph

    std::size_t size() const { return points.size(); }
};

enum class PromptType { point, box, point_and_box };

inline std::string to_string(PromptType t) {
    switch (t) {
        case PromptType::point: return "P";
        case PromptType::box: return "B";
        case PromptType::point_and_box: return "PB";
    }
    return "?";
}

inline PromptType prompt_type_from_string(const std::string& s) {
    if (s == "P" || s == "point") return PromptType::point;
    if (s == "B" || s == "box") return PromptType::box;
    if (s == "PB" || s == "point_and_box") return PromptType::point_and_box;
    throw ConfigError("unknown prompt type '" + s + "' (P, B, PB)");
}

struct PromptConfig {
    PromptType prompt_type = PromptType::point_and_box;  // SP
    double point_threshold = 1.0;                        // PT
    double box_threshold = 1.0;                          // BT
    int point_samples = 20;                              // SPS
    std::optional<int> background_class = 0;             // excluded from prompting
    bool single_survivor_set = false;   // literal reading: one Mahalanobis pass (PT)
    double forest_contamination = 0.1;
    bool deterministic_fps_start = false;  // start FPS at the point nearest the centroid

    void validate_ranges() const {
        if (point_threshold < 0.6 || point_threshold > 1.0)
            throw ConfigError("prompt.point_threshold out of range [0.6,1.0]");
        if (box_threshold < 0.6 || box_threshold > 1.0)
            throw ConfigError("prompt.box_threshold out of range [0.6,1.0]");
        if (point_samples < 5 || point_samples > 20)
            throw ConfigError("prompt.point_samples out of range [5,20]");
        validate_structural();
    }
    void validate_structural() const {
        if (point_threshold <= 0 || point_threshold > 1 || box_threshold <= 0 || box_threshold > 1)
            throw ConfigError("prompt thresholds must be in (0,1]");
        if (point_samples < 1) throw ConfigError("prompt.point_samples must be >= 1");
        if (forest_contamination < 0 || forest_contamination >= 1)
            throw ConfigError("prompt.forest_contamination must be in [0,1)");
    }
};

// Step 1: nodes grouped by argmax class, ties to the lower class index.
// Returns one raw set per class, empty sets included.
inline std::vector<ClassPointSet> group_by_class(const NodeProbabilities& probs, const SceneGraph& graph) {
    if (probs.node_count() != graph.node_count())
        throw DimensionMismatchError("probability rows != graph nodes");
    std::vector<ClassPointSet> sets(probs.num_classes());
    for (int c = 0; c < probs.num_classes(); ++c) sets[c].class_id = c;
    for (int v = 0; v < graph.node_count(); ++v) {
        const int c = probs.labels[v];
        sets[c].points.push_back({graph.nodes[v].x, graph.nodes[v].y});
        sets[c].node_indices.push_back(v);
    }
    return sets;
}

namespace detail {

// Average unsuccessful-search path length of a BST with n external nodes.
inline double iforest_c(int n) {
    if (n <= 1) return 0.0;
    if (n == 2) return 1.0;
    const double h = std::log(n - 1.0) + 0.5772156649015329;
    return 2.0 * h - 2.0 * (n - 1.0) / n;
}

struct IForestNode {
    int dim = -1;           // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int size = 0;           // leaf population
};

struct IForestTree {
    std::vector<IForestNode> nodes;

    int build(std::vector<std::array<double, 2>>& pts, int lo, int hi, int depth, int max_depth, Rng& rng) {
        IForestNode node;
        node.size = hi - lo;
        if (hi - lo <= 1 || depth >= max_depth) {
            nodes.push_back(node);
            return static_cast<int>(nodes.size()) - 1;
        }
        double mn[2] = {pts[lo][0], pts[lo][1]}, mx[2] = {pts[lo][0], pts[lo][1]};
        for (int i = lo + 1; i < hi; ++i)
            for (int d = 0; d < 2; ++d) {
                mn[d] = std::min(mn[d], pts[i][d]);
                mx[d] = std::max(mx[d], pts[i][d]);
            }
        int dim = static_cast<int>(rng.uniform_index(2));
        if (mx[dim] - mn[dim] <= 0) dim = 1 - dim;
        if (mx[dim] - mn[dim] <= 0) {  // all points identical: leaf
            nodes.push_back(node);
            return static_cast<int>(nodes.size()) - 1;
        }
        node.dim = dim;
        node.split = rng.uniform(mn[dim], mx[dim]);
        const auto mid = std::partition(pts.begin() + lo, pts.begin() + hi,
                                        [&](const auto& p) { return p[dim] < node.split; });
        const int m = static_cast<int>(mid - pts.begin());
        if (m == lo || m == hi) {  // degenerate split: leaf
            node.dim = -1;
            nodes.push_back(node);
            return static_cast<int>(nodes.size()) - 1;
        }
        const int self = static_cast<int>(nodes.size());
        nodes.push_back(node);
        const int l = build(pts, lo, m, depth + 1, max_depth, rng);
        const int r = build(pts, m, hi, depth + 1, max_depth, rng);
        nodes[self].left = l;
        nodes[self].right = r;
        return self;
    }

    int root = 0;

    double path_from(int idx, const std::array<double, 2>& p) const {
        double depth = 0.0;
        while (nodes[idx].dim >= 0) {
            idx = p[nodes[idx].dim] < nodes[idx].split ? nodes[idx].left : nodes[idx].right;
            depth += 1.0;
        }
        return depth + iforest_c(nodes[idx].size);
    }
};

}  // namespace detail

// Anomaly scores from an isolation forest (100 trees, subsample min(64, n))
// over 2D coordinates; s = 2^(-E[path]/c(subsample)).
inline std::vector<double> isolation_forest_scores(const std::vector<std::array<double, 2>>& pts,
                                                   std::uint64_t seed, int num_trees = 100) {
    const int n = static_cast<int>(pts.size());
    const int subsample = std::min(64, n);
    Rng rng(seed);
    std::vector<detail::IForestTree> trees(num_trees);
    std::vector<std::array<double, 2>> sample;
    const int max_depth = static_cast<int>(std::ceil(std::log2(std::max(2, subsample))));
    for (auto& tree : trees) {
        sample = pts;
        for (int t = 0; t < subsample; ++t) {
            const auto j = t + static_cast<int>(rng.uniform_index(sample.size() - t));
            std::swap(sample[t], sample[j]);
        }
        sample.resize(subsample);
        tree.root = tree.build(sample, 0, subsample, 0, max_depth, rng);
    }
    const double c_norm = detail::iforest_c(subsample);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) {
        double mean_path = 0.0;
        for (const auto& tree : trees) mean_path += tree.path_from(tree.root, pts[i]);
        mean_path /= num_trees;
        scores[i] = std::pow(2.0, -mean_path / std::max(c_norm, 1e-12));
    }
    return scores;
}

// Step 2: drop the highest-scoring ~contamination fraction. Ties with the
// cutoff score survive, so zero-variance sets pass unchanged. Sets smaller
// than 8 points pass through unfiltered.
inline ClassPointSet filter_isolation_forest(const ClassPointSet& set, std::uint64_t seed,
                                             double contamination = 0.1) {
    if (set.stage != PromptStage::raw)
        throw PipelineError("isolation forest expects a raw class point set");
    ClassPointSet out = set;
    out.stage = PromptStage::forest_filtered;
    const int n = static_cast<int>(set.size());
    const int drop_budget = static_cast<int>(std::floor(contamination * n));
    if (n < 8 || drop_budget < 1) return out;

    const auto scores = isolation_forest_scores(set.points, seed);
    std::vector<double> sorted = scores;
    std::nth_element(sorted.begin(), sorted.begin() + drop_budget, sorted.end(), std::greater<>());
    const double cutoff = sorted[drop_budget];  // (drop_budget+1)-th largest

    out.points.clear();
    out.node_indices.clear();
    for (int i = 0; i < n; ++i) {
        if (scores[i] > cutoff) continue;
        out.points.push_back(set.points[i]);
        if (!set.node_indices.empty()) out.node_indices.push_back(set.node_indices[i]);
    }
    return out;
}

// Mahalanobis distance of each point to the set's own distribution, with the
// spec's regularization Sigma + eps*I, eps = 1e-6 * trace(Sigma) / 2.
inline std::vector<double> mahalanobis_distances(const std::vector<std::array<double, 2>>& pts) {
    const int n = static_cast<int>(pts.size());
    Eigen::Vector2d mu = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mu += Eigen::Vector2d(p[0], p[1]);
    mu /= n;
    Eigen::Matrix2d sigma = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector2d d = Eigen::Vector2d(p[0], p[1]) - mu;
        sigma += d * d.transpose();
    }
    sigma /= n;
    sigma += Eigen::Matrix2d::Identity() * (1e-6 * sigma.trace() / 2.0);

    std::vector<double> dist(n);
    const double det = sigma.determinant();
    if (std::abs(det) > 1e-300) {
        const Eigen::LDLT<Eigen::Matrix2d> ldlt(sigma);
        for (int i = 0; i < n; ++i) {
            const Eigen::Vector2d d = Eigen::Vector2d(pts[i][0], pts[i][1]) - mu;
            dist[i] = std::sqrt(std::max(0.0, d.dot(ldlt.solve(d))));
        }
    } else {
        // Pseudo-inverse fallback for singular covariance.
        Eigen::JacobiSVD<Eigen::Matrix2d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::Vector2d s_inv = Eigen::Vector2d::Zero();
        for (int i = 0; i < 2; ++i)
            if (svd.singularValues()(i) > 1e-12 * svd.singularValues()(0))
                s_inv(i) = 1.0 / svd.singularValues()(i);
        const Eigen::Matrix2d inv = svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
        for (int i = 0; i < n; ++i) {
            const Eigen::Vector2d d = Eigen::Vector2d(pts[i][0], pts[i][1]) - mu;
            dist[i] = std::sqrt(std::max(0.0, d.dot(inv * d)));
        }
    }
    return dist;
}

// Step 3: drop points whose distance, normalized by the set maximum, exceeds
// the threshold. Sets smaller than 3 points pass through.
inline ClassPointSet filter_mahalanobis(const ClassPointSet& set, double threshold) {
    if (set.stage != PromptStage::forest_filtered)
        throw PipelineError("Mahalanobis filter expects a forest-filtered set");
    if (threshold <= 0.0 || threshold > 1.0)
        throw ConfigError("Mahalanobis threshold must be in (0,1]");
    ClassPointSet out = set;
    out.stage = PromptStage::mahalanobis_filtered;
    const int n = static_cast<int>(set.size());
    if (n < 3) return out;

    const auto dist = mahalanobis_distances(set.points);
    const double max_dist = *std::max_element(dist.begin(), dist.end());
    if (max_dist <= 0.0) return out;

    out.points.clear();
    out.node_indices.clear();
    for (int i = 0; i < n; ++i) {
        if (dist[i] / max_dist > threshold) continue;
        out.points.push_back(set.points[i]);
        if (!set.node_indices.empty()) out.node_indices.push_back(set.node_indices[i]);
    }
    return out;
}

// Step 4a: tight axis-aligned box over the set.
inline std::optional<Box> build_box(const ClassPointSet& set) {
    if (set.points.empty()) return std::nullopt;
    Box b{set.points[0][0], set.points[0][1], set.points[0][0], set.points[0][1]};
    for (const auto& p : set.points) {
        b.x_min = std::min(b.x_min, p[0]);
        b.y_min = std::min(b.y_min, p[1]);
        b.x_max = std::max(b.x_max, p[0]);
        b.y_max = std::max(b.y_max, p[1]);
    }
    return b;
}

// Step 4b: farthest point sampling. Greedy max-min, ties to the lower index;
// the start point is a seeded draw (or the centroid-nearest point when
// deterministic_start is set).
inline std::vector<std::array<double, 2>> sample_points_fps(const ClassPointSet& set, int n,
                                                            std::uint64_t seed,
                                                            bool deterministic_start = false) {
    const int size = static_cast<int>(set.size());
    if (size == 0) return {};
    if (n >= size) return set.points;

    int start = 0;
    if (deterministic_start) {
        double cx = 0, cy = 0;
        for (const auto& p : set.points) {
            cx += p[0];
            cy += p[1];
        }
        cx /= size;
        cy /= size;
        double best = std::numeric_limits<double>::max();
        for (int i = 0; i < size; ++i) {
            const double dx = set.points[i][0] - cx, dy = set.points[i][1] - cy;
            const double d = dx * dx + dy * dy;
            if (d < best) {
                best = d;
                start = i;
            }
        }
    } else {
        Rng rng(seed);
        start = static_cast<int>(rng.uniform_index(size));
    }

    // Greedy max-min on squared distances; the first maximum wins, so ties
    // resolve to the lower index.
    std::vector<std::array<double, 2>> out;
    out.reserve(n);
    std::vector<double> min_dist(size, std::numeric_limits<double>::max());
    std::vector<char> selected(size, 0);
    int current = start;
    selected[current] = 1;
    out.push_back(set.points[current]);
    for (int round = 1; round < n; ++round) {
        int best = -1;
        double best_dist = -1.0;
        for (int i = 0; i < size; ++i) {
            const double dx = set.points[i][0] - set.points[current][0];
            const double dy = set.points[i][1] - set.points[current][1];
            min_dist[i] = std::min(min_dist[i], dx * dx + dy * dy);
            if (!selected[i] && min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected[current] = 1;
        out.push_back(set.points[current]);
    }
    return out;
}

// Per-class filtered prompts, shaped [1, C, SPS, 2] and [1, C, 4].
struct PromptSet {
    int num_classes = 0;
    int point_samples = 0;                   // P = SPS
    std::vector<double> point_prompts;       // [1, C, P, 2], zero-padded
    std::vector<double> boxes;               // [1, C, 4]
    std::vector<int> point_counts;           // valid points per class
    std::vector<std::uint8_t> class_presence;
    std::vector<std::uint8_t> has_box;
    PromptConfig config;

    std::array<double, 2> point(int cls, int idx) const {
        const std::size_t o = (static_cast<std::size_t>(cls) * point_samples + idx) * 2;
        return {point_prompts[o], point_prompts[o + 1]};
    }
    Box box(int cls) const {
        const std::size_t o = static_cast<std::size_t>(cls) * 4;
        return {boxes[o], boxes[o + 1], boxes[o + 2], boxes[o + 3]};
    }
};

// Steps 1-4 composed. Pure function of (probs, graph, cfg, seed).
inline PromptSet build_prompts(const NodeProbabilities& probs, const SceneGraph& graph,
                               const PromptConfig& cfg, std::uint64_t seed) {
    cfg.validate_structural();
    const auto raw_sets = group_by_class(probs, graph);
    const int num_classes = static_cast<int>(raw_sets.size());

    PromptSet ps;
    ps.num_classes = num_classes;
    ps.point_samples = cfg.point_samples;
    ps.point_prompts.assign(static_cast<std::size_t>(num_classes) * cfg.point_samples * 2, 0.0);
    ps.boxes.assign(static_cast<std::size_t>(num_classes) * 4, 0.0);
    ps.point_counts.assign(num_classes, 0);
    ps.class_presence.assign(num_classes, 0);
    ps.has_box.assign(num_classes, 0);
    ps.config = cfg;

    bool any_present = false;
    for (int c = 0; c < num_classes; ++c) {
        if (cfg.background_class && c == *cfg.background_class) continue;
        if (raw_sets[c].points.empty()) continue;

        const auto forest = filter_isolation_forest(raw_sets[c], hash_combine(seed, c * 3 + 0),
                                                    cfg.forest_contamination);
        const auto point_set = filter_mahalanobis(forest, cfg.point_threshold);
        const auto box_set = cfg.single_survivor_set
                                 ? point_set
                                 : filter_mahalanobis(forest, cfg.box_threshold);
        if (point_set.points.empty() && box_set.points.empty()) continue;

        ps.class_presence[c] = 1;
        any_present = true;

        const auto fps = sample_points_fps(point_set, cfg.point_samples, hash_combine(seed, c * 3 + 1),
                                           cfg.deterministic_fps_start);
        ps.point_counts[c] = static_cast<int>(fps.size());
        for (std::size_t i = 0; i < fps.size(); ++i) {
            const std::size_t o = (static_cast<std::size_t>(c) * cfg.point_samples + i) * 2;
            ps.point_prompts[o] = fps[i][0];
            ps.point_prompts[o + 1] = fps[i][1];
        }
        if (const auto box = build_box(box_set)) {
            ps.has_box[c] = 1;
            const std::size_t o = static_cast<std::size_t>(c) * 4;
            ps.boxes[o] = box->x_min;
            ps.boxes[o + 1] = box->y_min;
            ps.boxes[o + 2] = box->x_max;
            ps.boxes[o + 3] = box->y_max;
        }
    }
    if (!any_present)
        throw EmptyPromptError("no class produced prompts; upstream classification collapsed");
    return ps;
}

}  // namespace graphseg
