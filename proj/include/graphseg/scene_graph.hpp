#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "graphseg/backends.hpp"

namespace graphseg {

// Interest point with the sigmoid-normalized logit values appended to its
// descriptor. feat.size() = D + T, the last `appended` entries in [0,1].
struct EnhancedPoint {
    double x = 0.0;
    double y = 0.0;
    std::vector<double> feat;
};

struct GraphBuildConfig {
    int k = 8;
    enum class Mode { inference, training } mode = Mode::inference;
    int extra_pool = 10;  // training candidate pool beyond k
    int exact_knn_limit = 5000;  // grid-bucket index above this node count

    static constexpr int kMin = 8, kMax = 32;
    void validate_ranges() const {
        if (k < kMin || k > kMax)
            throw ConfigError("graph.k out of range [8,32]: " + std::to_string(k));
        if (extra_pool < 0) throw ConfigError("graph.extra_pool must be >= 0");
    }
};

struct GraphAugmentConfig {
    double edge_drop_prob = 0.2;
    double node_drop_prob = 0.05;
    double coord_noise_sigma = 2.0;    // pixels
    double feature_noise_sigma = 0.01;

    void validate() const {
        if (edge_drop_prob < 0 || edge_drop_prob >= 1 || node_drop_prob < 0)
            throw ConfigError("augment probabilities must be in [0,1)");
        if (coord_noise_sigma < 0 || feature_noise_sigma < 0)
            throw ConfigError("augment sigmas must be >= 0");
    }
};

// Undirected weighted k-NN graph over enhanced points. Edges are unordered
// pairs stored with u < v; weight(u,v) is the Euclidean distance between the
// two enhanced descriptors.
struct SceneGraph {
    std::vector<EnhancedPoint> nodes;
    std::vector<std::pair<int, int>> edges;
    std::vector<double> weights;
    int width = 0;
    int height = 0;
    int appended_count = 0;           // trailing logit entries per node
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::vector<std::string> warnings;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int feature_dim() const { return nodes.empty() ? 0 : static_cast<int>(nodes[0].feat.size()); }

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(nodes.size());
        for (const auto& [u, v] : edges) {
            adj[u].push_back(v);
            adj[v].push_back(u);
        }
        return adj;
    }
};

inline double descriptor_distance(const EnhancedPoint& a, const EnhancedPoint& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.feat.size(); ++i) {
        const double d = a.feat[i] - b.feat[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Appends sigmoid(L at the nearest pixel) per logit map to each descriptor.
// Point order and count are preserved.
inline std::vector<EnhancedPoint> enhance_points(const std::vector<InterestPoint>& points,
                                                 const std::vector<LogitMap>& logit_maps) {
    for (std::size_t m = 1; m < logit_maps.size(); ++m)
        if (logit_maps[m].width != logit_maps[0].width || logit_maps[m].height != logit_maps[0].height)
            throw DimensionMismatchError("logit maps disagree on dimensions");
    std::vector<EnhancedPoint> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        if (!logit_maps.empty()) {
            if (p.x < 0 || p.x >= logit_maps[0].width || p.y < 0 || p.y >= logit_maps[0].height)
                throw DimensionMismatchError("point outside logit map bounds; map size must equal image size");
        }
        EnhancedPoint e;
        e.x = p.x;
        e.y = p.y;
        e.feat = p.descriptor;
        for (const auto& map : logit_maps) {
            const int px = std::clamp(static_cast<int>(std::lround(p.x)), 0, map.width - 1);
            const int py = std::clamp(static_cast<int>(std::lround(p.y)), 0, map.height - 1);
            e.feat.push_back(sigmoid(map.at(px, py)));
        }
        out.push_back(std::move(e));
    }
    return out;
}

namespace detail {

// Nearest `count` node indices for each node by (x,y) Euclidean distance,
// ties broken by lower index, self excluded. Exact O(n^2) scan.
inline std::vector<std::vector<int>> knn_exact(const std::vector<EnhancedPoint>& pts, int count) {
    const int n = static_cast<int>(pts.size());
    std::vector<std::vector<int>> result(n);
    std::vector<std::pair<double, int>> cand;
    cand.reserve(n);
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y;
            cand.emplace_back(dx * dx + dy * dy, j);
        }
        const int take = std::min<int>(count, static_cast<int>(cand.size()));
        std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
        result[i].reserve(take);
        for (int t = 0; t < take; ++t) result[i].push_back(cand[t].second);
    }
    return result;
}

// Grid-bucket index with expanding ring search; same contract as knn_exact.
inline std::vector<std::vector<int>> knn_grid(const std::vector<EnhancedPoint>& pts, int count) {
    const int n = static_cast<int>(pts.size());
    double min_x = pts[0].x, max_x = pts[0].x, min_y = pts[0].y, max_y = pts[0].y;
    for (const auto& p : pts) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    const double span_x = std::max(max_x - min_x, 1e-9);
    const double span_y = std::max(max_y - min_y, 1e-9);
    const double cell = std::max(std::sqrt(span_x * span_y / n), 1e-6);
    const int cols = std::max(1, static_cast<int>(span_x / cell) + 1);
    const int rows = std::max(1, static_cast<int>(span_y / cell) + 1);

    std::vector<std::vector<int>> buckets(static_cast<std::size_t>(cols) * rows);
    auto bucket_of = [&](double x, double y) {
        int bx = std::min(cols - 1, static_cast<int>((x - min_x) / cell));
        int by = std::min(rows - 1, static_cast<int>((y - min_y) / cell));
        return by * cols + bx;
    };
    for (int i = 0; i < n; ++i) buckets[bucket_of(pts[i].x, pts[i].y)].push_back(i);

    std::vector<std::vector<int>> result(n);
    std::vector<std::pair<double, int>> cand;
    for (int i = 0; i < n; ++i) {
        cand.clear();
        const int bx = std::min(cols - 1, static_cast<int>((pts[i].x - min_x) / cell));
        const int by = std::min(rows - 1, static_cast<int>((pts[i].y - min_y) / cell));
        const int max_ring = std::max(cols, rows);
        for (int ring = 0; ring <= max_ring; ++ring) {
            // Stop once the k-th best so far is provably closer than anything
            // in the next unexplored ring.
            if (static_cast<int>(cand.size()) >= count) {
                std::nth_element(cand.begin(), cand.begin() + (count - 1), cand.end());
                const double kth = cand[count - 1].first;
                const double ring_gap = (ring - 1) * cell;
                if (ring_gap >= 0 && ring_gap * ring_gap >= kth) break;
            }
            bool any_cell = false;
            for (int dy = -ring; dy <= ring; ++dy) {
                for (int dx = -ring; dx <= ring; ++dx) {
                    if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
                    const int cx = bx + dx, cy = by + dy;
                    if (cx < 0 || cx >= cols || cy < 0 || cy >= rows) continue;
                    any_cell = true;
                    for (int j : buckets[static_cast<std::size_t>(cy) * cols + cx]) {
                        if (j == i) continue;
                        const double ddx = pts[i].x - pts[j].x, ddy = pts[i].y - pts[j].y;
                        cand.emplace_back(ddx * ddx + ddy * ddy, j);
                    }
                }
            }
            if (!any_cell && ring > std::max(cols, rows)) break;
        }
        const int take = std::min<int>(count, static_cast<int>(cand.size()));
        std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
        result[i].reserve(take);
        for (int t = 0; t < take; ++t) result[i].push_back(cand[t].second);
    }
    return result;
}

}  // namespace detail

inline SceneGraph build_graph(const std::vector<EnhancedPoint>& points, const GraphBuildConfig& cfg,
                              std::uint64_t seed, int appended_count = 0,
                              int image_width = 0, int image_height = 0) {
    const int n = static_cast<int>(points.size());
    if (n < 2) throw DegenerateGraphError("graph needs at least 2 nodes, got " + std::to_string(n));
    if (cfg.k < 1) throw ConfigError("graph.k must be >= 1");

    SceneGraph g;
    g.nodes = points;
    g.width = image_width;
    g.height = image_height;
    g.appended_count = appended_count;
    g.seed = seed;

    int k = cfg.k;
    if (k >= n) {
        k = n - 1;
        g.warnings.push_back("k clamped from " + std::to_string(cfg.k) + " to " + std::to_string(k));
    }
    const bool training = cfg.mode == GraphBuildConfig::Mode::training;
    const int pool = training ? std::min(k + cfg.extra_pool, n - 1) : k;

    const auto neighbors = n <= cfg.exact_knn_limit ? detail::knn_exact(points, pool)
                                                    : detail::knn_grid(points, pool);

    std::vector<std::pair<int, int>> edge_set;
    edge_set.reserve(static_cast<std::size_t>(n) * k);
    Rng rng(seed);
    std::vector<int> pick;
    for (int v = 0; v < n; ++v) {
        const auto& cand = neighbors[v];
        if (training && static_cast<int>(cand.size()) > k) {
            // k draws without replacement from the k+extra_pool nearest.
            pick.assign(cand.begin(), cand.end());
            for (int t = 0; t < k; ++t) {
                const auto j = t + static_cast<int>(rng.uniform_index(pick.size() - t));
                std::swap(pick[t], pick[j]);
            }
            for (int t = 0; t < k; ++t) {
                const int u = pick[t];
                edge_set.emplace_back(std::min(v, u), std::max(v, u));
            }
        } else {
            for (int t = 0; t < std::min<int>(k, static_cast<int>(cand.size())); ++t) {
                const int u = cand[t];
                edge_set.emplace_back(std::min(v, u), std::max(v, u));
            }
        }
    }
    std::sort(edge_set.begin(), edge_set.end());
    edge_set.erase(std::unique(edge_set.begin(), edge_set.end()), edge_set.end());

    g.edges = std::move(edge_set);
    g.weights.reserve(g.edges.size());
    for (const auto& [u, v] : g.edges) g.weights.push_back(descriptor_distance(g.nodes[u], g.nodes[v]));
    return g;
}

struct GraphAugmentResult {
    SceneGraph graph;
    std::vector<int> kept_nodes;  // original index of each surviving node
    bool degraded_to_identity = false;
};

inline GraphAugmentResult augment_graph_tracked(const SceneGraph& graph, const GraphAugmentConfig& cfg,
                                                std::uint64_t seed) {
    const int n = graph.node_count();
    auto identity = [&] {
        GraphAugmentResult r;
        r.graph = graph;
        r.kept_nodes.resize(n);
        std::iota(r.kept_nodes.begin(), r.kept_nodes.end(), 0);
        r.degraded_to_identity = true;
        return r;
    };
    // node_drop_prob >= 1 can never keep 2 nodes; treat it as the exhausted
    // retry path and hand back the unaugmented graph.
    if (cfg.node_drop_prob >= 1.0) return identity();

    Rng rng(seed);
    double node_drop = cfg.node_drop_prob;
    std::vector<int> kept;
    for (int attempt = 0; attempt < 4; ++attempt) {
        kept.clear();
        for (int i = 0; i < n; ++i)
            if (!rng.bernoulli(node_drop)) kept.push_back(i);
        if (static_cast<int>(kept.size()) >= 2) break;
        node_drop *= 0.5;  // retry with halved drop rate
        if (attempt == 3) return identity();
    }

    std::vector<int> remap(n, -1);
    for (std::size_t i = 0; i < kept.size(); ++i) remap[kept[i]] = static_cast<int>(i);

    GraphAugmentResult result;
    SceneGraph& out = result.graph;
    out.width = graph.width;
    out.height = graph.height;
    out.appended_count = graph.appended_count;
    out.seed = seed;
    out.config_hash = graph.config_hash;

    const int base_dim = graph.feature_dim() - graph.appended_count;
    out.nodes.reserve(kept.size());
    for (int idx : kept) {
        EnhancedPoint p = graph.nodes[idx];
        p.x += rng.normal(0.0, cfg.coord_noise_sigma);
        p.y += rng.normal(0.0, cfg.coord_noise_sigma);
        for (std::size_t d = 0; d < p.feat.size(); ++d) {
            p.feat[d] += rng.normal(0.0, cfg.feature_noise_sigma);
            if (static_cast<int>(d) >= base_dim) p.feat[d] = std::clamp(p.feat[d], 0.0, 1.0);
        }
        out.nodes.push_back(std::move(p));
    }

    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
        const auto [u, v] = graph.edges[e];
        if (remap[u] < 0 || remap[v] < 0) continue;
        if (rng.bernoulli(cfg.edge_drop_prob)) continue;
        const int a = std::min(remap[u], remap[v]);
        const int b = std::max(remap[u], remap[v]);
        out.edges.emplace_back(a, b);
    }
    std::sort(out.edges.begin(), out.edges.end());
    out.weights.reserve(out.edges.size());
    for (const auto& [u, v] : out.edges) out.weights.push_back(descriptor_distance(out.nodes[u], out.nodes[v]));

    result.kept_nodes = std::move(kept);
    return result;
}

inline SceneGraph augment_graph(const SceneGraph& graph, const GraphAugmentConfig& cfg, std::uint64_t seed) {
    return augment_graph_tracked(graph, cfg, seed).graph;
}

// ---------------------------------------------------------------------------
// Binary container for caching graphs between pipeline stages.
// Layout: magic "GSG1", u32 version, u64 seed, u64 config_hash,
// i32 width/height/appended_count/node_count/feature_dim, node table
// (x, y, feat...) as f64, u64 edge_count, edges as (i32, i32, f64 weight).
// ---------------------------------------------------------------------------
namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw PipelineError("truncated graph container");
    return v;
}

}  // namespace detail

inline void save_graph(const SceneGraph& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os.write("GSG1", 4);
    detail::put<std::uint32_t>(os, 1);
    detail::put<std::uint64_t>(os, g.seed);
    detail::put<std::uint64_t>(os, g.config_hash);
    detail::put<std::int32_t>(os, g.width);
    detail::put<std::int32_t>(os, g.height);
    detail::put<std::int32_t>(os, g.appended_count);
    detail::put<std::int32_t>(os, g.node_count());
    detail::put<std::int32_t>(os, g.feature_dim());
    for (const auto& p : g.nodes) {
        detail::put<double>(os, p.x);
        detail::put<double>(os, p.y);
        for (double f : p.feat) detail::put<double>(os, f);
    }
    detail::put<std::uint64_t>(os, g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        detail::put<std::int32_t>(os, g.edges[e].first);
        detail::put<std::int32_t>(os, g.edges[e].second);
        detail::put<double>(os, g.weights[e]);
    }
}

inline SceneGraph load_graph(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GSG1", 4) != 0) throw PipelineError("not a graph container: " + path);
    const auto version = detail::get<std::uint32_t>(is);
    if (version != 1) throw PipelineError("unsupported graph container version");
    SceneGraph g;
    g.seed = detail::get<std::uint64_t>(is);
    g.config_hash = detail::get<std::uint64_t>(is);
    g.width = detail::get<std::int32_t>(is);
    g.height = detail::get<std::int32_t>(is);
    g.appended_count = detail::get<std::int32_t>(is);
    const int n = detail::get<std::int32_t>(is);
    const int dim = detail::get<std::int32_t>(is);
    g.nodes.resize(n);
    for (auto& p : g.nodes) {
        p.x = detail::get<double>(is);
        p.y = detail::get<double>(is);
        p.feat.resize(dim);
        for (auto& f : p.feat) f = detail::get<double>(is);
    }
    const auto m = detail::get<std::uint64_t>(is);
    g.edges.resize(m);
    g.weights.resize(m);
    for (std::size_t e = 0; e < m; ++e) {
        g.edges[e].first = detail::get<std::int32_t>(is);
        g.edges[e].second = detail::get<std::int32_t>(is);
        g.weights[e] = detail::get<double>(is);
    }
    return g;
}

}  // namespace graphseg
