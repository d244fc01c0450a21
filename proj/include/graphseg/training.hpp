#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "graphseg/backends.hpp"
#include "graphseg/classifier.hpp"
#include "graphseg/image.hpp"
#include "graphseg/scene_graph.hpp"

namespace graphseg {

// Class label per point, read from the ground-truth mask at the rounded,
// clamped pixel under each point.
inline std::vector<int> extract_labels(const std::vector<InterestPoint>& points,
                                       const LabelMask& gt_mask, int num_classes) {
    for (auto v : gt_mask.data)
        if (v >= num_classes)
            throw LabelRangeError("mask contains label " + std::to_string(v) +
                                  " >= num_classes " + std::to_string(num_classes));
    std::vector<int> labels;
    labels.reserve(points.size());
    for (const auto& p : points) {
        const int x = std::clamp(static_cast<int>(std::lround(p.x)), 0, gt_mask.width - 1);
        const int y = std::clamp(static_cast<int>(std::lround(p.y)), 0, gt_mask.height - 1);
        labels.push_back(gt_mask.at(x, y));
    }
    return labels;
}

// Inverse-frequency weights over present classes, normalized to sum 1;
// absent classes get 0.
inline Eigen::VectorXd class_weights(const std::vector<int>& labels, int num_classes) {
    if (labels.empty()) throw TrainingError("class_weights needs at least one node");
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_classes);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw LabelRangeError("label out of range: " + std::to_string(y));
        counts(y) += 1.0;
    }
    Eigen::VectorXd w = Eigen::VectorXd::Zero(num_classes);
    double total = 0.0;
    for (int c = 0; c < num_classes; ++c)
        if (counts(c) > 0) {
            w(c) = 1.0 / counts(c);
            total += w(c);
        }
    return w / total;
}

// Macro-averaged F1 over the classes present in the ground truth.
inline double node_f1(const std::vector<int>& predicted, const std::vector<int>& ground_truth,
                      int num_classes) {
    if (predicted.empty() || predicted.size() != ground_truth.size())
        throw MetricError("node_f1 needs equal-length, non-empty label vectors");
    std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    std::vector<bool> present(num_classes, false);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int p = predicted[i], g = ground_truth[i];
        present[g] = true;
        if (p == g)
            tp[g] += 1;
        else {
            fp[p] += 1;
            fn[g] += 1;
        }
    }
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (!present[c]) continue;
        const double precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
        sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        ++n;
    }
    return sum / n;
}

struct ImageAugmentOptions {
    double mirror_prob = 0.5;
    double crop_min = 0.6;  // fraction of each dimension kept
    double crop_max = 1.0;
};

// Horizontal mirror, then a random crop keeping 60-100% of each dimension
// (output stays at the cropped size). A crop that would erase every
// non-background pixel is redrawn up to 5 times, then the crop falls back to
// the full frame.
inline std::pair<Image, LabelMask> augment_image(const Image& image, const LabelMask& mask,
                                                 std::uint64_t seed,
                                                 const ImageAugmentOptions& opt = {}) {
    if (image.width != mask.width || image.height != mask.height)
        throw DimensionMismatchError("image and mask dimensions differ");
    Rng rng(seed);

    Image img = image;
    LabelMask msk = mask;
    if (rng.bernoulli(opt.mirror_prob)) {
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width / 2; ++x) {
                const int mx = img.width - 1 - x;
                auto a = img.rgb(x, y), b = img.rgb(mx, y);
                img.set_rgb(x, y, b);
                img.set_rgb(mx, y, a);
                std::swap(msk.data[static_cast<std::size_t>(y) * msk.width + x],
                          msk.data[static_cast<std::size_t>(y) * msk.width + mx]);
            }
    }

    const std::size_t foreground = msk.count_nonzero();
    int x0 = 0, y0 = 0, cw = img.width, ch = img.height;
    for (int attempt = 0; attempt < 5; ++attempt) {
        const int w = std::clamp(
            static_cast<int>(std::lround(img.width * rng.uniform(opt.crop_min, opt.crop_max))),
            std::min(img.width, kMinImageSide), img.width);
        const int h = std::clamp(
            static_cast<int>(std::lround(img.height * rng.uniform(opt.crop_min, opt.crop_max))),
            std::min(img.height, kMinImageSide), img.height);
        const int ox = static_cast<int>(rng.uniform_index(img.width - w + 1));
        const int oy = static_cast<int>(rng.uniform_index(img.height - h + 1));
        if (foreground > 0) {
            std::size_t kept = 0;
            for (int y = oy; y < oy + h && !kept; ++y)
                for (int x = ox; x < ox + w; ++x)
                    if (msk.at(x, y)) {
                        kept = 1;
                        break;
                    }
            if (!kept) continue;  // crop removed all non-background pixels
        }
        x0 = ox;
        y0 = oy;
        cw = w;
        ch = h;
        break;
    }

    if (x0 == 0 && y0 == 0 && cw == img.width && ch == img.height) return {img, msk};
    Image out_img(cw, ch);
    LabelMask out_msk(cw, ch);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
            out_img.set_rgb(x, y, img.rgb(x0 + x, y0 + y));
            out_msk.set(x, y, msk.at(x0 + x, y0 + y));
        }
    return {out_img, out_msk};
}

struct SupportSample {
    Image image;
    LabelMask mask;
};

struct TrainOptions {
    DetectorConfig detector;
    GraphBuildConfig graph;          // mode is forced to training inside the loop
    GraphAugmentConfig graph_aug;
    ClassifierConfig classifier;     // input_dim 0 resolves to D + prompts.size()
    TrainConfig train;
    std::vector<std::string> prompts;  // logit prompts appended as features, in order
    bool image_augmentation = true;
    bool graph_augmentation = true;
    ImageAugmentOptions image_aug;
};

struct TrainingReport {
    std::vector<double> loss_curve;  // mean loss per epoch
    int epochs_configured = 0;
    int epochs_run = 0;
    int best_epoch = -1;
    double best_loss = 0.0;
    double train_seconds = 0.0;
    std::vector<std::string> warnings;
};

struct TrainResult {
    ClassifierModel model;
    TrainingReport report;
};

// The §4.2 recipe: per epoch iterate support samples; per sample augment,
// detect, enhance, build a training-mode graph, augment it, forward in train
// mode, and take one Adam step on the weighted NLL. StepLR decays the
// learning rate; early stopping watches for a relative-improvement plateau
// and the best-loss snapshot is restored at the end.
inline TrainResult train_few_shot(const std::vector<SupportSample>& support, const Backends& backends,
                                  TrainOptions opt) {
    if (support.empty()) throw TrainingError("need at least one support sample");
    if (!backends.detector || !backends.logits) throw ConfigError("training needs detector and logit backends");

    const int descriptor_dim = backends.detector->descriptor_dim();
    if (opt.classifier.input_dim == 0)
        opt.classifier.input_dim = descriptor_dim + static_cast<int>(opt.prompts.size());
    else if (opt.classifier.input_dim != descriptor_dim + static_cast<int>(opt.prompts.size()))
        throw ConfigError("classifier.input_dim != descriptor_dim + prompt count");
    opt.graph.mode = GraphBuildConfig::Mode::training;

    const int total_epochs = opt.train.resolved_epochs(opt.classifier.num_classes);
    const int step_size = opt.train.resolved_step_size(total_epochs);
    const int patience = opt.train.resolved_patience(total_epochs);

    TrainResult result;
    result.model = ClassifierModel(opt.classifier, opt.train.seed);
    TrainingReport& report = result.report;
    report.epochs_configured = total_epochs;

    AdamOptimizer adam(result.model.params(), opt.train.learning_rate);

    // Pooled weights come from the unaugmented support set.
    Eigen::VectorXd pooled_weights;
    if (opt.train.pooled_class_weights) {
        std::vector<int> pooled;
        for (std::size_t s = 0; s < support.size(); ++s) {
            const auto pts = backends.detector->detect(support[s].image, opt.detector,
                                                       hash_combine(opt.train.seed, 0x9000 + s));
            const auto labels = extract_labels(pts, support[s].mask, opt.classifier.num_classes);
            pooled.insert(pooled.end(), labels.begin(), labels.end());
        }
        pooled_weights = class_weights(pooled, opt.classifier.num_classes);
    }

    StopWatch watch;
    nn::ParamList best_params = result.model.params();
    double best_loss = std::numeric_limits<double>::max();
    double plateau_ref = std::numeric_limits<double>::max();
    int best_epoch = -1;
    int stall = 0;
    bool any_sample_ever_succeeded = false;

    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        adam.set_learning_rate(opt.train.learning_rate *
                               std::pow(opt.train.gamma, epoch / step_size));
        double epoch_loss = 0.0;
        int used = 0;
        for (std::size_t s = 0; s < support.size(); ++s) {
            const std::uint64_t sample_seed =
                hash_combine(hash_combine(opt.train.seed, epoch), s);
            try {
                Image img = support[s].image;
                LabelMask msk = support[s].mask;
                if (opt.image_augmentation) {
                    auto aug = augment_image(img, msk, hash_combine(sample_seed, 1), opt.image_aug);
                    img = std::move(aug.first);
                    msk = std::move(aug.second);
                }
                // Detection is a pure function of the (augmented) image; the
                // seed is keyed per sample so augmentation alone drives the
                // per-epoch variation, as with a real detector.
                const auto pts = backends.detector->detect(
                    img, opt.detector, hash_combine(hash_combine(opt.train.seed, 0x5eed), s));
                if (pts.empty()) throw EmptyDetectionError("no points detected");
                std::vector<LogitMap> maps;
                maps.reserve(opt.prompts.size());
                for (const auto& prompt : opt.prompts) maps.push_back(backends.logits->logit_map(img, prompt));
                const auto enhanced = enhance_points(pts, maps);
                auto labels = extract_labels(pts, msk, opt.classifier.num_classes);

                SceneGraph graph = build_graph(enhanced, opt.graph, hash_combine(sample_seed, 3),
                                               static_cast<int>(opt.prompts.size()), img.width, img.height);
                if (opt.graph_augmentation) {
                    auto aug = augment_graph_tracked(graph, opt.graph_aug, hash_combine(sample_seed, 4));
                    std::vector<int> kept_labels;
                    kept_labels.reserve(aug.kept_nodes.size());
                    for (int idx : aug.kept_nodes) kept_labels.push_back(labels[idx]);
                    graph = std::move(aug.graph);
                    labels = std::move(kept_labels);
                }

                const Eigen::VectorXd weights = opt.train.pooled_class_weights
                                                    ? pooled_weights
                                                    : class_weights(labels, opt.classifier.num_classes);

                Rng fwd_rng(hash_combine(sample_seed, 5));
                nn::Workspace ws;
                const auto log_probs = result.model.log_probs(graph, /*training=*/true, &fwd_rng, &ws);
                Eigen::MatrixXd d_log_probs;
                const double loss = weighted_nll(log_probs, labels, weights, &d_log_probs);
                const auto grads = result.model.backward(ws, d_log_probs);
                adam.step(result.model.params(), grads);

                epoch_loss += loss;
                ++used;
                any_sample_ever_succeeded = true;
            } catch (const PipelineError& e) {
                if (epoch == 0)
                    report.warnings.push_back("sample " + std::to_string(s) + " skipped: " + e.what());
            }
        }
        if (used == 0) {
            if (!any_sample_ever_succeeded)
                throw TrainingError("every support sample failed during training");
            continue;
        }
        epoch_loss /= used;
        report.loss_curve.push_back(epoch_loss);
        report.epochs_run = epoch + 1;

        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best_epoch = epoch;
            best_params = result.model.params();
        }
        // Plateau: `patience` epochs without a >=1e-4 relative improvement.
        const double rel_improvement =
            plateau_ref == std::numeric_limits<double>::max()
                ? 1.0
                : (plateau_ref - epoch_loss) / std::max(std::abs(plateau_ref), 1e-12);
        if (rel_improvement >= 1e-4) {
            plateau_ref = epoch_loss;
            stall = 0;
        } else {
            ++stall;
        }
        if (opt.train.early_stopping && stall >= patience) break;
    }

    result.model.params() = best_params;
    report.best_epoch = best_epoch;
    report.best_loss = best_loss;
    report.train_seconds = watch.seconds();
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned, self-describing binary blob embedding the
// classifier config, graph/detector configs, class names, logit prompts and
// the backend descriptor dimension, so inference can validate compatibility.
// ---------------------------------------------------------------------------
struct Checkpoint {
    ClassifierModel model;
    GraphBuildConfig graph_cfg;
    DetectorConfig detector_cfg;
    std::vector<std::string> class_names;
    std::vector<std::string> prompts;
    int descriptor_dim = 0;
};

namespace detail {

inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is) {
    const auto n = get<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw PipelineError("truncated checkpoint");
    return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os.write("GSCK", 4);
    detail::put<std::uint32_t>(os, 1);
    const auto& cfg = ckpt.model.config();
    detail::put_string(os, to_string(cfg.model_type));
    detail::put<std::int32_t>(os, cfg.hidden_dim);
    detail::put<std::int32_t>(os, cfg.integration_dim);
    detail::put<double>(os, cfg.dropout);
    detail::put<double>(os, cfg.edge_dropout);
    detail::put<std::int32_t>(os, cfg.num_classes);
    detail::put<std::int32_t>(os, cfg.input_dim);
    detail::put<std::int32_t>(os, ckpt.graph_cfg.k);
    detail::put<std::int32_t>(os, ckpt.graph_cfg.extra_pool);
    detail::put<std::int32_t>(os, ckpt.detector_cfg.nms_radius);
    detail::put<std::int32_t>(os, ckpt.detector_cfg.min_points);
    detail::put<double>(os, ckpt.detector_cfg.confidence_threshold);
    detail::put<std::int32_t>(os, ckpt.descriptor_dim);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.class_names.size()));
    for (const auto& s : ckpt.class_names) detail::put_string(os, s);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.prompts.size()));
    for (const auto& s : ckpt.prompts) detail::put_string(os, s);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.model.params().size()));
    for (const auto& p : ckpt.model.params()) {
        detail::put<std::int32_t>(os, static_cast<std::int32_t>(p.rows()));
        detail::put<std::int32_t>(os, static_cast<std::int32_t>(p.cols()));
        for (Eigen::Index i = 0; i < p.size(); ++i) detail::put<double>(os, *(p.data() + i));
    }
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GSCK", 4) != 0) throw PipelineError("not a checkpoint: " + path);
    if (detail::get<std::uint32_t>(is) != 1) throw PipelineError("unsupported checkpoint version");
    Checkpoint ckpt;
    ClassifierConfig cfg;
    cfg.model_type = model_type_from_string(detail::get_string(is));
    cfg.hidden_dim = detail::get<std::int32_t>(is);
    cfg.integration_dim = detail::get<std::int32_t>(is);
    cfg.dropout = detail::get<double>(is);
    cfg.edge_dropout = detail::get<double>(is);
    cfg.num_classes = detail::get<std::int32_t>(is);
    cfg.input_dim = detail::get<std::int32_t>(is);
    ckpt.graph_cfg.k = detail::get<std::int32_t>(is);
    ckpt.graph_cfg.extra_pool = detail::get<std::int32_t>(is);
    ckpt.detector_cfg.nms_radius = detail::get<std::int32_t>(is);
    ckpt.detector_cfg.min_points = detail::get<std::int32_t>(is);
    ckpt.detector_cfg.confidence_threshold = detail::get<double>(is);
    ckpt.descriptor_dim = detail::get<std::int32_t>(is);
    const auto num_classes = detail::get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < num_classes; ++i) ckpt.class_names.push_back(detail::get_string(is));
    const auto num_prompts = detail::get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < num_prompts; ++i) ckpt.prompts.push_back(detail::get_string(is));
    ckpt.model = ClassifierModel(cfg, 0);
    const auto num_params = detail::get<std::uint32_t>(is);
    if (num_params != ckpt.model.params().size()) throw PipelineError("checkpoint parameter count mismatch");
    for (auto& p : ckpt.model.params()) {
        const auto rows = detail::get<std::int32_t>(is);
        const auto cols = detail::get<std::int32_t>(is);
        if (rows != p.rows() || cols != p.cols()) throw PipelineError("checkpoint parameter shape mismatch");
        for (Eigen::Index i = 0; i < p.size(); ++i) *(p.data() + i) = detail::get<double>(is);
    }
    return ckpt;
}

// A checkpoint only runs against a detector whose descriptor dimension (plus
// prompt count) matches the trained input width.
inline void validate_checkpoint_compat(const Checkpoint& ckpt, const InterestPointDetector& detector) {
    if (detector.descriptor_dim() != ckpt.descriptor_dim)
        throw CheckpointIncompatibleError(
            "checkpoint was trained with descriptor dim " + std::to_string(ckpt.descriptor_dim) +
            ", backend provides " + std::to_string(detector.descriptor_dim()));
    const int expected = ckpt.descriptor_dim + static_cast<int>(ckpt.prompts.size());
    if (ckpt.model.config().input_dim != expected)
        throw CheckpointIncompatibleError("checkpoint input_dim inconsistent with prompts");
}

}  // namespace graphseg
