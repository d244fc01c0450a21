#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "graphseg/classifier_types.hpp"
#include "graphseg/scene_graph.hpp"

namespace graphseg {

// ---------------------------------------------------------------------------
// Three conv blocks (edge dropout -> graph conv -> ReLU -> feature dropout)
// followed by a perceptron with one ReLU hidden layer and a log-softmax head.
// Parameters live in a flat list so the optimizer and checkpoints can treat
// them uniformly; the Layout struct names the indices.
// ---------------------------------------------------------------------------

namespace nn {

constexpr int kNumBlocks = 3;
constexpr int kGatHeads = 4;
constexpr double kLeakySlope = 0.2;

struct ConvLayout {
    // GCN: w, b. SAGE: w (self), w_nb, b. GAT: head_w/head_a_src/head_a_dst
    // per head, proj, b.
    int w = -1, w_nb = -1, b = -1, proj = -1;
    std::array<int, kGatHeads> head_w{-1, -1, -1, -1};
    std::array<int, kGatHeads> head_a_src{-1, -1, -1, -1};
    std::array<int, kGatHeads> head_a_dst{-1, -1, -1, -1};
    int in_dim = 0, out_dim = 0, head_dim = 0;
};

struct Layout {
    std::array<ConvLayout, kNumBlocks> conv;
    int mlp_w1 = -1, mlp_b1 = -1, mlp_w2 = -1, mlp_b2 = -1;
};

using ParamList = std::vector<Eigen::MatrixXd>;

inline Eigen::MatrixXd glorot(int rows, int cols, Rng& rng) {
    const double a = std::sqrt(6.0 / (rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
    return m;
}

// Per-block cache written by the forward pass, consumed by backward.
struct ConvCache {
    Eigen::MatrixXd x_in;
    Eigen::SparseMatrix<double> agg;      // GCN: sym-normalized A+I; SAGE: row-normalized A
    Eigen::MatrixXd agg_x;                // SAGE: M * X
    Eigen::MatrixXd pre_relu;
    Eigen::MatrixXd relu_mask;
    Eigen::MatrixXd drop_mask;            // empty in eval mode
    // GAT internals, per head.
    std::vector<int> nbr_offsets;         // CSR over nodes, self loop included
    std::vector<int> nbr;
    std::array<Eigen::MatrixXd, kGatHeads> z;
    std::array<Eigen::VectorXd, kGatHeads> u_src, w_dst;
    std::array<std::vector<double>, kGatHeads> alpha;
    std::array<std::vector<double>, kGatHeads> pre_sign;  // LeakyReLU slope at each edge
    Eigen::MatrixXd concat;
};

struct Workspace {
    std::array<ConvCache, kNumBlocks> conv;
    Eigen::MatrixXd mlp_in, mlp_pre1, mlp_relu_mask, mlp_hidden, logits, log_probs;
};

}  // namespace nn

class ClassifierModel {
public:
    ClassifierModel() = default;

    ClassifierModel(const ClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate_structural();
        if (cfg.input_dim < 1) throw ConfigError("classifier.input_dim must be set before construction");
        Rng rng(hash_combine(seed, 0x436c6673ULL));
        int in = cfg.input_dim;
        for (int blk = 0; blk < nn::kNumBlocks; ++blk) {
            auto& c = layout_.conv[blk];
            c.in_dim = in;
            c.out_dim = cfg.hidden_dim;
            switch (cfg.model_type) {
                case ModelType::GCN:
                    c.w = add(nn::glorot(in, c.out_dim, rng));
                    c.b = add(Eigen::MatrixXd::Zero(1, c.out_dim));
                    break;
                case ModelType::SAGE:
                    c.w = add(nn::glorot(in, c.out_dim, rng));
                    c.w_nb = add(nn::glorot(in, c.out_dim, rng));
                    c.b = add(Eigen::MatrixXd::Zero(1, c.out_dim));
                    break;
                case ModelType::GAT: {
                    c.head_dim = (c.out_dim + nn::kGatHeads - 1) / nn::kGatHeads;
                    for (int h = 0; h < nn::kGatHeads; ++h) {
                        c.head_w[h] = add(nn::glorot(in, c.head_dim, rng));
                        c.head_a_src[h] = add(nn::glorot(c.head_dim, 1, rng));
                        c.head_a_dst[h] = add(nn::glorot(c.head_dim, 1, rng));
                    }
                    c.proj = add(nn::glorot(c.head_dim * nn::kGatHeads, c.out_dim, rng));
                    c.b = add(Eigen::MatrixXd::Zero(1, c.out_dim));
                    break;
                }
            }
            in = c.out_dim;
        }
        layout_.mlp_w1 = add(nn::glorot(cfg.hidden_dim, cfg.integration_dim, rng));
        layout_.mlp_b1 = add(Eigen::MatrixXd::Zero(1, cfg.integration_dim));
        layout_.mlp_w2 = add(nn::glorot(cfg.integration_dim, cfg.num_classes, rng));
        layout_.mlp_b2 = add(Eigen::MatrixXd::Zero(1, cfg.num_classes));
    }

    const ClassifierConfig& config() const { return cfg_; }
    const nn::ParamList& params() const { return params_; }
    nn::ParamList& params() { return params_; }
    const nn::Layout& layout() const { return layout_; }

    // Log-probabilities per node (rows logsumexp to 0). Training mode applies
    // edge dropout and feature dropout from `rng`; eval mode is deterministic
    // and leaves the model untouched, so snapshots are safe to share.
    Eigen::MatrixXd log_probs(const SceneGraph& graph, bool training, Rng* rng,
                              nn::Workspace* ws_out = nullptr) const {
        if (graph.feature_dim() != cfg_.input_dim)
            throw ConfigError("graph feature dim " + std::to_string(graph.feature_dim()) +
                              " != classifier input dim " + std::to_string(cfg_.input_dim));
        if (training && !rng) throw ConfigError("training-mode forward needs an rng");

        nn::Workspace local;
        nn::Workspace& ws = ws_out ? *ws_out : local;

        const int n = graph.node_count();
        Eigen::MatrixXd x(n, cfg_.input_dim);
        for (int v = 0; v < n; ++v)
            for (int d = 0; d < cfg_.input_dim; ++d) x(v, d) = graph.nodes[v].feat[d];

        for (int blk = 0; blk < nn::kNumBlocks; ++blk) {
            auto& cache = ws.conv[blk];
            const auto edges = training ? drop_edges(graph.edges, cfg_.edge_dropout, *rng) : graph.edges;
            cache.x_in = x;
            Eigen::MatrixXd y = conv_forward(blk, x, edges, n, cache);
            cache.pre_relu = y;
            cache.relu_mask = (y.array() > 0.0).cast<double>();
            y = y.cwiseProduct(cache.relu_mask);
            if (training && cfg_.dropout > 0.0) {
                cache.drop_mask = dropout_mask(y.rows(), y.cols(), cfg_.dropout, *rng);
                y = y.cwiseProduct(cache.drop_mask);
            }
            x = std::move(y);
        }

        ws.mlp_in = x;
        ws.mlp_pre1 = (x * params_[layout_.mlp_w1]).rowwise() +
                      params_[layout_.mlp_b1].row(0);
        ws.mlp_relu_mask = (ws.mlp_pre1.array() > 0.0).cast<double>();
        ws.mlp_hidden = ws.mlp_pre1.cwiseProduct(ws.mlp_relu_mask);
        ws.logits = (ws.mlp_hidden * params_[layout_.mlp_w2]).rowwise() +
                    params_[layout_.mlp_b2].row(0);
        ws.log_probs = log_softmax_rows(ws.logits);
        return ws.log_probs;
    }

    // Gradients w.r.t. every parameter given d(loss)/d(log_probs); same
    // order/shapes as params().
    nn::ParamList backward(const nn::Workspace& ws, const Eigen::MatrixXd& d_log_probs) const {
        nn::ParamList grads(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i)
            grads[i] = Eigen::MatrixXd::Zero(params_[i].rows(), params_[i].cols());

        // log-softmax: dx = dy - softmax .* rowsum(dy)
        Eigen::MatrixXd d_logits = d_log_probs;
        const Eigen::VectorXd row_sums = d_log_probs.rowwise().sum();
        const Eigen::MatrixXd softmax = ws.log_probs.array().exp().matrix();
        d_logits -= (softmax.array().colwise() * row_sums.array()).matrix();

        grads[layout_.mlp_w2] = ws.mlp_hidden.transpose() * d_logits;
        grads[layout_.mlp_b2] = d_logits.colwise().sum();
        Eigen::MatrixXd d_hidden = d_logits * params_[layout_.mlp_w2].transpose();
        d_hidden = d_hidden.cwiseProduct(ws.mlp_relu_mask);
        grads[layout_.mlp_w1] = ws.mlp_in.transpose() * d_hidden;
        grads[layout_.mlp_b1] = d_hidden.colwise().sum();
        Eigen::MatrixXd dx = d_hidden * params_[layout_.mlp_w1].transpose();

        for (int blk = nn::kNumBlocks - 1; blk >= 0; --blk) {
            const auto& cache = ws.conv[blk];
            if (cache.drop_mask.size() > 0) dx = dx.cwiseProduct(cache.drop_mask);
            dx = dx.cwiseProduct(cache.relu_mask);
            dx = conv_backward(blk, dx, cache, grads);
        }
        return grads;
    }

private:
    int add(Eigen::MatrixXd m) {
        params_.push_back(std::move(m));
        return static_cast<int>(params_.size()) - 1;
    }

    static std::vector<std::pair<int, int>> drop_edges(const std::vector<std::pair<int, int>>& edges,
                                                       double prob, Rng& rng) {
        if (prob <= 0.0) return edges;
        std::vector<std::pair<int, int>> kept;
        kept.reserve(edges.size());
        for (const auto& e : edges)
            if (!rng.bernoulli(prob)) kept.push_back(e);
        return kept;
    }

    static Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
        Eigen::MatrixXd m(rows, cols);
        const double scale = 1.0 / (1.0 - p);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.bernoulli(p) ? 0.0 : scale;
        return m;
    }

    static Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& x) {
        Eigen::MatrixXd out(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double mx = x.row(r).maxCoeff();
            const double lse = std::log((x.row(r).array() - mx).exp().sum()) + mx;
            out.row(r) = x.row(r).array() - lse;
        }
        return out;
    }

    // Symmetrically normalized adjacency with self loops (GCN).
    static Eigen::SparseMatrix<double> gcn_matrix(const std::vector<std::pair<int, int>>& edges, int n) {
        Eigen::VectorXd degree = Eigen::VectorXd::Ones(n);  // self loop
        for (const auto& [u, v] : edges) {
            degree(u) += 1.0;
            degree(v) += 1.0;
        }
        const Eigen::VectorXd inv_sqrt = degree.array().rsqrt();
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(edges.size() * 2 + n);
        for (int i = 0; i < n; ++i) trip.emplace_back(i, i, inv_sqrt(i) * inv_sqrt(i));
        for (const auto& [u, v] : edges) {
            trip.emplace_back(u, v, inv_sqrt(u) * inv_sqrt(v));
            trip.emplace_back(v, u, inv_sqrt(u) * inv_sqrt(v));
        }
        Eigen::SparseMatrix<double> s(n, n);
        s.setFromTriplets(trip.begin(), trip.end());
        return s;
    }

    // Row-normalized adjacency without self loops (SAGE mean aggregation).
    static Eigen::SparseMatrix<double> mean_matrix(const std::vector<std::pair<int, int>>& edges, int n) {
        Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
        for (const auto& [u, v] : edges) {
            degree(u) += 1.0;
            degree(v) += 1.0;
        }
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(edges.size() * 2);
        for (const auto& [u, v] : edges) {
            trip.emplace_back(u, v, 1.0 / degree(u));
            trip.emplace_back(v, u, 1.0 / degree(v));
        }
        Eigen::SparseMatrix<double> s(n, n);
        s.setFromTriplets(trip.begin(), trip.end());
        return s;
    }

    static void build_csr(const std::vector<std::pair<int, int>>& edges, int n, nn::ConvCache& cache) {
        std::vector<std::vector<int>> adj(n);
        for (int i = 0; i < n; ++i) adj[i].push_back(i);  // self loop
        for (const auto& [u, v] : edges) {
            adj[u].push_back(v);
            adj[v].push_back(u);
        }
        cache.nbr_offsets.assign(n + 1, 0);
        cache.nbr.clear();
        for (int i = 0; i < n; ++i) {
            cache.nbr_offsets[i + 1] = cache.nbr_offsets[i] + static_cast<int>(adj[i].size());
            cache.nbr.insert(cache.nbr.end(), adj[i].begin(), adj[i].end());
        }
    }

    Eigen::MatrixXd conv_forward(int blk, const Eigen::MatrixXd& x,
                                 const std::vector<std::pair<int, int>>& edges, int n,
                                 nn::ConvCache& cache) const {
        const auto& c = layout_.conv[blk];
        switch (cfg_.model_type) {
            case ModelType::GCN: {
                cache.agg = gcn_matrix(edges, n);
                return (cache.agg * (x * params_[c.w])).rowwise() + params_[c.b].row(0);
            }
            case ModelType::SAGE: {
                cache.agg = mean_matrix(edges, n);
                cache.agg_x = cache.agg * x;
                return (x * params_[c.w] + cache.agg_x * params_[c.w_nb]).rowwise() +
                       params_[c.b].row(0);
            }
            case ModelType::GAT: {
                build_csr(edges, n, cache);
                cache.concat.resize(n, c.head_dim * nn::kGatHeads);
                for (int h = 0; h < nn::kGatHeads; ++h) {
                    auto& z = cache.z[h];
                    z = x * params_[c.head_w[h]];
                    cache.u_src[h] = z * params_[c.head_a_src[h]];
                    cache.w_dst[h] = z * params_[c.head_a_dst[h]];
                    auto& alpha = cache.alpha[h];
                    auto& sign = cache.pre_sign[h];
                    alpha.assign(cache.nbr.size(), 0.0);
                    sign.assign(cache.nbr.size(), 1.0);
                    for (int i = 0; i < n; ++i) {
                        const int lo = cache.nbr_offsets[i], hi = cache.nbr_offsets[i + 1];
                        double mx = -std::numeric_limits<double>::infinity();
                        for (int e = lo; e < hi; ++e) {
                            const double pre = cache.u_src[h](i) + cache.w_dst[h](cache.nbr[e]);
                            sign[e] = pre > 0.0 ? 1.0 : nn::kLeakySlope;
                            alpha[e] = pre > 0.0 ? pre : pre * nn::kLeakySlope;
                            mx = std::max(mx, alpha[e]);
                        }
                        double denom = 0.0;
                        for (int e = lo; e < hi; ++e) {
                            alpha[e] = std::exp(alpha[e] - mx);
                            denom += alpha[e];
                        }
                        for (int e = lo; e < hi; ++e) alpha[e] /= denom;
                        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(c.head_dim);
                        for (int e = lo; e < hi; ++e) acc += alpha[e] * z.row(cache.nbr[e]);
                        cache.concat.block(i, h * c.head_dim, 1, c.head_dim) = acc;
                    }
                }
                return (cache.concat * params_[c.proj]).rowwise() + params_[c.b].row(0);
            }
        }
        throw PipelineError("unreachable conv type");
    }

    Eigen::MatrixXd conv_backward(int blk, const Eigen::MatrixXd& dy, const nn::ConvCache& cache,
                                  nn::ParamList& grads) const {
        const auto& c = layout_.conv[blk];
        switch (cfg_.model_type) {
            case ModelType::GCN: {
                grads[c.b] += dy.colwise().sum();
                const Eigen::MatrixXd d_agg = cache.agg.transpose() * dy;  // agg is symmetric
                grads[c.w] += cache.x_in.transpose() * d_agg;
                return d_agg * params_[c.w].transpose();
            }
            case ModelType::SAGE: {
                grads[c.b] += dy.colwise().sum();
                grads[c.w] += cache.x_in.transpose() * dy;
                grads[c.w_nb] += cache.agg_x.transpose() * dy;
                Eigen::MatrixXd dx = dy * params_[c.w].transpose();
                dx += cache.agg.transpose() * (dy * params_[c.w_nb].transpose());
                return dx;
            }
            case ModelType::GAT: {
                grads[c.b] += dy.colwise().sum();
                grads[c.proj] += cache.concat.transpose() * dy;
                const Eigen::MatrixXd d_concat = dy * params_[c.proj].transpose();
                const int n = static_cast<int>(cache.nbr_offsets.size()) - 1;
                Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(cache.x_in.rows(), cache.x_in.cols());
                for (int h = 0; h < nn::kGatHeads; ++h) {
                    const auto& z = cache.z[h];
                    const auto& alpha = cache.alpha[h];
                    const auto& sign = cache.pre_sign[h];
                    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(z.rows(), z.cols());
                    Eigen::VectorXd du = Eigen::VectorXd::Zero(n);
                    Eigen::VectorXd dw = Eigen::VectorXd::Zero(n);
                    for (int i = 0; i < n; ++i) {
                        const int lo = cache.nbr_offsets[i], hi = cache.nbr_offsets[i + 1];
                        const Eigen::RowVectorXd dyh = d_concat.block(i, h * c.head_dim, 1, c.head_dim);
                        // d_alpha, then softmax jacobian, then LeakyReLU.
                        double dot = 0.0;
                        std::vector<double> d_alpha(hi - lo);
                        for (int e = lo; e < hi; ++e) {
                            d_alpha[e - lo] = dyh.dot(z.row(cache.nbr[e]));
                            dz.row(cache.nbr[e]) += alpha[e] * dyh;
                            dot += alpha[e] * d_alpha[e - lo];
                        }
                        for (int e = lo; e < hi; ++e) {
                            const double d_pre = alpha[e] * (d_alpha[e - lo] - dot) * sign[e];
                            du(i) += d_pre;
                            dw(cache.nbr[e]) += d_pre;
                        }
                    }
                    dz += du * params_[c.head_a_src[h]].transpose();
                    dz += dw * params_[c.head_a_dst[h]].transpose();
                    grads[c.head_a_src[h]] += z.transpose() * du;
                    grads[c.head_a_dst[h]] += z.transpose() * dw;
                    grads[c.head_w[h]] += cache.x_in.transpose() * dz;
                    dx += dz * params_[c.head_w[h]].transpose();
                }
                return dx;
            }
        }
        throw PipelineError("unreachable conv type");
    }

    ClassifierConfig cfg_;
    nn::Layout layout_;
    nn::ParamList params_;
};

enum class ForwardMode { train, eval };

// Spec-facing forward: per-node class distributions.
inline NodeProbabilities forward(const ClassifierModel& model, const SceneGraph& graph,
                                 ForwardMode mode, Rng* rng = nullptr) {
    const auto lp = model.log_probs(graph, mode == ForwardMode::train, rng);
    return NodeProbabilities::from_log_probs(lp);
}

// Weighted NLL: sum_v w[y_v] * (-log p_v[y_v]) / sum_v w[y_v].
// d_log_probs (optional out) is the gradient w.r.t. the log-probabilities.
inline double weighted_nll(const Eigen::MatrixXd& log_probs, const std::vector<int>& labels,
                           const Eigen::VectorXd& class_weights,
                           Eigen::MatrixXd* d_log_probs = nullptr) {
    if (static_cast<Eigen::Index>(labels.size()) != log_probs.rows())
        throw DimensionMismatchError("labels size != log-prob rows");
    double weight_sum = 0.0;
    for (int y : labels) weight_sum += class_weights(y);
    if (weight_sum <= 0.0) throw TrainingError("all node labels carry zero class weight");
    double loss = 0.0;
    if (d_log_probs) *d_log_probs = Eigen::MatrixXd::Zero(log_probs.rows(), log_probs.cols());
    for (Eigen::Index v = 0; v < log_probs.rows(); ++v) {
        const int y = labels[v];
        loss -= class_weights(y) * log_probs(v, y);
        if (d_log_probs) (*d_log_probs)(v, y) = -class_weights(y) / weight_sum;
    }
    return loss / weight_sum;
}

class AdamOptimizer {
public:
    AdamOptimizer(const nn::ParamList& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
            v_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
        }
    }

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }

    void step(nn::ParamList& params, const nn::ParamList& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
            const Eigen::MatrixXd m_hat = m_[i] / bc1;
            const Eigen::MatrixXd v_hat = v_[i] / bc2;
            params[i] -= lr_ * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    nn::ParamList m_, v_;
};

}  // namespace graphseg
