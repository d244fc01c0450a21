#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "graphseg/common.hpp"

namespace graphseg {

enum class ModelType { GCN, GAT, SAGE };

inline std::string to_string(ModelType t) {
    switch (t) {
        case ModelType::GCN: return "GCN";
        case ModelType::GAT: return "GAT";
        case ModelType::SAGE: return "SAGE";
    }
    return "?";
}

inline ModelType model_type_from_string(const std::string& s) {
    if (s == "GCN") return ModelType::GCN;
    if (s == "GAT") return ModelType::GAT;
    if (s == "SAGE") return ModelType::SAGE;
    throw ConfigError("unknown model type '" + s + "' (GCN, GAT, SAGE)");
}

struct ClassifierConfig {
    ModelType model_type = ModelType::SAGE;  // MT
    int hidden_dim = 512;                    // HD
    int integration_dim = 256;               // ID
    double dropout = 0.2;                    // DR
    double edge_dropout = 0.5;               // DRE
    int num_classes = 2;
    int input_dim = 0;                       // D + T, set from the backend at runtime

    void validate_ranges() const {
        if (hidden_dim < 256 || hidden_dim > 1024)
            throw ConfigError("classifier.hidden_dim out of range [256,1024]: " + std::to_string(hidden_dim));
        if (integration_dim < 128 || integration_dim > 512)
            throw ConfigError("classifier.integration_dim out of range [128,512]");
        if (dropout < 0.1 || dropout > 0.3)
            throw ConfigError("classifier.dropout out of range [0.1,0.3]");
        if (edge_dropout < 0.3 || edge_dropout > 0.8)
            throw ConfigError("classifier.edge_dropout out of range [0.3,0.8]");
        validate_structural();
    }
    void validate_structural() const {
        if (num_classes < 2) throw ConfigError("classifier.num_classes must be >= 2");
        if (hidden_dim < 1 || integration_dim < 1) throw ConfigError("classifier dims must be positive");
        if (dropout < 0 || dropout >= 1 || edge_dropout < 0 || edge_dropout >= 1)
            throw ConfigError("classifier dropout probabilities must be in [0,1)");
    }
};

// Epoch schedule adjusted to class count: 2->500, 3->750, 8->1200, 16->1500,
// 22->2500, linear interpolation between, clamped outside.
inline int epochs_for_class_count(int classes) {
    static const std::vector<std::pair<int, int>> anchors = {
        {2, 500}, {3, 750}, {8, 1200}, {16, 1500}, {22, 2500}};
    if (classes <= anchors.front().first) return anchors.front().second;
    if (classes >= anchors.back().first) return anchors.back().second;
    for (std::size_t i = 1; i < anchors.size(); ++i) {
        if (classes <= anchors[i].first) {
            const auto [c0, e0] = anchors[i - 1];
            const auto [c1, e1] = anchors[i];
            const double t = static_cast<double>(classes - c0) / (c1 - c0);
            return static_cast<int>(std::lround(e0 + t * (e1 - e0)));
        }
    }
    return anchors.back().second;
}

struct TrainConfig {
    int epochs = 0;             // 0 -> epochs_for_class_count(num_classes)
    double learning_rate = 1e-3;
    int step_size = 0;          // 0 -> epochs / 3
    double gamma = 0.5;
    int patience = 0;           // 0 -> max(50, epochs / 10)
    std::uint64_t seed = 0;
    bool early_stopping = true;
    bool pooled_class_weights = false;  // per-sample weights by default

    int resolved_epochs(int num_classes) const {
        return epochs > 0 ? epochs : epochs_for_class_count(num_classes);
    }
    int resolved_step_size(int total_epochs) const {
        return step_size > 0 ? step_size : std::max(1, total_epochs / 3);
    }
    int resolved_patience(int total_epochs) const {
        return patience > 0 ? patience : std::max(50, total_epochs / 10);
    }
};

// Per-node class distribution p_v; rows sum to 1.
struct NodeProbabilities {
    Eigen::MatrixXd probs;    // n x num_classes
    std::vector<int> labels;  // argmax per node, ties to the lower class

    static NodeProbabilities from_log_probs(const Eigen::MatrixXd& log_probs) {
        NodeProbabilities np;
        np.probs = log_probs.array().exp().matrix();
        np.labels.resize(log_probs.rows());
        for (Eigen::Index v = 0; v < log_probs.rows(); ++v) {
            int best = 0;
            for (Eigen::Index c = 1; c < log_probs.cols(); ++c)
                if (np.probs(v, c) > np.probs(v, best)) best = static_cast<int>(c);
            np.labels[v] = best;
        }
        return np;
    }

    int node_count() const { return static_cast<int>(probs.rows()); }
    int num_classes() const { return static_cast<int>(probs.cols()); }
};

}  // namespace graphseg
