#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "graphseg/datasets.hpp"
#include "graphseg/metrics.hpp"
#include "graphseg/mock_backends.hpp"
#include "graphseg/prompt_engine.hpp"
#include "graphseg/segmenter.hpp"
#include "graphseg/training.hpp"

namespace graphseg {

// ---------------------------------------------------------------------------
// Job configuration. JSON on disk; unknown keys rejected, ranges validated at
// load (strict_ranges=false lifts the tuned-range checks for desk-scale runs,
// structural validation always applies).
// ---------------------------------------------------------------------------
struct JobConfig {
    std::string train_dir;
    std::string test_dir;
    std::string granularity = "TruckCrane";

    std::string detector_backend = "mock-grid";
    std::string logit_backend = "mock-colorkey";
    std::string segmenter_backend = "mock-region";
    nlohmann::json detector_options = nlohmann::json::object();
    nlohmann::json logit_options = nlohmann::json::object();
    nlohmann::json segmenter_options = nlohmann::json::object();

    DetectorConfig detector;
    GraphBuildConfig graph;
    ClassifierConfig classifier;
    TrainConfig train;
    PromptConfig prompt;
    GraphAugmentConfig graph_aug;
    bool image_augmentation = true;
    bool graph_augmentation = true;
    bool enhancement = true;  // append sigmoid logits to descriptors

    int support_count = 5;
    std::vector<int> support_indices;
    int eval_workers = 2;
    std::uint64_t seed = 0;
    bool strict_ranges = true;

    void validate() const {
        if (strict_ranges) {
            detector.validate_ranges();
            graph.validate_ranges();
            classifier.validate_ranges();
            prompt.validate_ranges();
        } else {
            classifier.validate_structural();
            prompt.validate_structural();
        }
        graph_aug.validate();
        if (support_count < 1 && support_indices.empty())
            throw ConfigError("support.count must be >= 1");
        if (eval_workers < 1) throw ConfigError("eval.workers must be >= 1");
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::vector<std::string>& known,
                                const std::string& scope) {
    for (const auto& [key, _] : obj.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown config key '" + scope + key + "'");
}

template <typename T>
void read_if(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json job_config_to_json(const JobConfig& c) {
    nlohmann::json j;
    j["dataset"] = {{"train_dir", c.train_dir}, {"test_dir", c.test_dir}, {"granularity", c.granularity}};
    j["backend"] = {{"detector", c.detector_backend},
                    {"logits", c.logit_backend},
                    {"segmenter", c.segmenter_backend},
                    {"detector_options", c.detector_options},
                    {"logit_options", c.logit_options},
                    {"segmenter_options", c.segmenter_options}};
    j["detector"] = {{"nms_radius", c.detector.nms_radius},
                     {"min_points", c.detector.min_points},
                     {"confidence_threshold", c.detector.confidence_threshold}};
    j["graph"] = {{"k", c.graph.k}, {"extra_pool", c.graph.extra_pool}};
    j["classifier"] = {{"model_type", to_string(c.classifier.model_type)},
                       {"hidden_dim", c.classifier.hidden_dim},
                       {"integration_dim", c.classifier.integration_dim},
                       {"dropout", c.classifier.dropout},
                       {"edge_dropout", c.classifier.edge_dropout}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"learning_rate", c.train.learning_rate},
                  {"step_size", c.train.step_size},
                  {"gamma", c.train.gamma},
                  {"patience", c.train.patience},
                  {"early_stopping", c.train.early_stopping},
                  {"pooled_class_weights", c.train.pooled_class_weights}};
    j["prompt"] = {{"prompt_type", to_string(c.prompt.prompt_type)},
                   {"point_threshold", c.prompt.point_threshold},
                   {"box_threshold", c.prompt.box_threshold},
                   {"point_samples", c.prompt.point_samples},
                   {"background_class", c.prompt.background_class ? nlohmann::json(*c.prompt.background_class)
                                                                  : nlohmann::json(nullptr)},
                   {"single_survivor_set", c.prompt.single_survivor_set},
                   {"forest_contamination", c.prompt.forest_contamination},
                   {"deterministic_fps_start", c.prompt.deterministic_fps_start}};
    j["augment"] = {{"image", c.image_augmentation},
                    {"graph", c.graph_augmentation},
                    {"edge_drop_prob", c.graph_aug.edge_drop_prob},
                    {"node_drop_prob", c.graph_aug.node_drop_prob},
                    {"coord_noise_sigma", c.graph_aug.coord_noise_sigma},
                    {"feature_noise_sigma", c.graph_aug.feature_noise_sigma}};
    j["enhancement"] = c.enhancement;
    j["support"] = {{"count", c.support_count}, {"indices", c.support_indices}};
    j["eval"] = {{"workers", c.eval_workers}};
    j["seed"] = c.seed;
    j["strict_ranges"] = c.strict_ranges;
    return j;
}

inline JobConfig job_config_from_json(const nlohmann::json& j) {
    using detail::read_if;
    using detail::reject_unknown_keys;
    reject_unknown_keys(j, {"dataset", "backend", "detector", "graph", "classifier", "train", "prompt",
                            "augment", "enhancement", "support", "eval", "seed", "strict_ranges"},
                        "");
    JobConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        reject_unknown_keys(d, {"train_dir", "test_dir", "granularity"}, "dataset.");
        read_if(d, "train_dir", c.train_dir);
        read_if(d, "test_dir", c.test_dir);
        read_if(d, "granularity", c.granularity);
    }
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        reject_unknown_keys(b, {"detector", "logits", "segmenter", "detector_options", "logit_options",
                                "segmenter_options"},
                            "backend.");
        read_if(b, "detector", c.detector_backend);
        read_if(b, "logits", c.logit_backend);
        read_if(b, "segmenter", c.segmenter_backend);
        if (b.contains("detector_options")) c.detector_options = b.at("detector_options");
        if (b.contains("logit_options")) c.logit_options = b.at("logit_options");
        if (b.contains("segmenter_options")) c.segmenter_options = b.at("segmenter_options");
    }
    if (j.contains("detector")) {
        const auto& d = j.at("detector");
        reject_unknown_keys(d, {"nms_radius", "min_points", "confidence_threshold"}, "detector.");
        read_if(d, "nms_radius", c.detector.nms_radius);
        read_if(d, "min_points", c.detector.min_points);
        read_if(d, "confidence_threshold", c.detector.confidence_threshold);
    }
    if (j.contains("graph")) {
        const auto& g = j.at("graph");
        reject_unknown_keys(g, {"k", "extra_pool"}, "graph.");
        read_if(g, "k", c.graph.k);
        read_if(g, "extra_pool", c.graph.extra_pool);
    }
    if (j.contains("classifier")) {
        const auto& m = j.at("classifier");
        reject_unknown_keys(m, {"model_type", "hidden_dim", "integration_dim", "dropout", "edge_dropout"},
                            "classifier.");
        if (m.contains("model_type")) c.classifier.model_type = model_type_from_string(m.at("model_type"));
        read_if(m, "hidden_dim", c.classifier.hidden_dim);
        read_if(m, "integration_dim", c.classifier.integration_dim);
        read_if(m, "dropout", c.classifier.dropout);
        read_if(m, "edge_dropout", c.classifier.edge_dropout);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown_keys(t, {"epochs", "learning_rate", "step_size", "gamma", "patience",
                                "early_stopping", "pooled_class_weights"},
                            "train.");
        read_if(t, "epochs", c.train.epochs);
        read_if(t, "learning_rate", c.train.learning_rate);
        read_if(t, "step_size", c.train.step_size);
        read_if(t, "gamma", c.train.gamma);
        read_if(t, "patience", c.train.patience);
        read_if(t, "early_stopping", c.train.early_stopping);
        read_if(t, "pooled_class_weights", c.train.pooled_class_weights);
    }
    if (j.contains("prompt")) {
        const auto& p = j.at("prompt");
        reject_unknown_keys(p, {"prompt_type", "point_threshold", "box_threshold", "point_samples",
                                "background_class", "single_survivor_set", "forest_contamination",
                                "deterministic_fps_start"},
                            "prompt.");
        if (p.contains("prompt_type")) c.prompt.prompt_type = prompt_type_from_string(p.at("prompt_type"));
        read_if(p, "point_threshold", c.prompt.point_threshold);
        read_if(p, "box_threshold", c.prompt.box_threshold);
        read_if(p, "point_samples", c.prompt.point_samples);
        if (p.contains("background_class")) {
            if (p.at("background_class").is_null())
                c.prompt.background_class.reset();
            else
                c.prompt.background_class = p.at("background_class").get<int>();
        }
        read_if(p, "single_survivor_set", c.prompt.single_survivor_set);
        read_if(p, "forest_contamination", c.prompt.forest_contamination);
        read_if(p, "deterministic_fps_start", c.prompt.deterministic_fps_start);
    }
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        reject_unknown_keys(a, {"image", "graph", "edge_drop_prob", "node_drop_prob", "coord_noise_sigma",
                                "feature_noise_sigma"},
                            "augment.");
        read_if(a, "image", c.image_augmentation);
        read_if(a, "graph", c.graph_augmentation);
        read_if(a, "edge_drop_prob", c.graph_aug.edge_drop_prob);
        read_if(a, "node_drop_prob", c.graph_aug.node_drop_prob);
        read_if(a, "coord_noise_sigma", c.graph_aug.coord_noise_sigma);
        read_if(a, "feature_noise_sigma", c.graph_aug.feature_noise_sigma);
    }
    read_if(j, "enhancement", c.enhancement);
    if (j.contains("support")) {
        const auto& s = j.at("support");
        reject_unknown_keys(s, {"count", "indices"}, "support.");
        read_if(s, "count", c.support_count);
        read_if(s, "indices", c.support_indices);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown_keys(e, {"workers"}, "eval.");
        read_if(e, "workers", c.eval_workers);
    }
    read_if(j, "seed", c.seed);
    read_if(j, "strict_ranges", c.strict_ranges);
    return c;
}

// Environment overrides are honored for paths only.
inline JobConfig load_job_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    JobConfig c = job_config_from_json(j);
    if (const char* v = std::getenv("GRAPHSEG_TRAIN_DIR")) c.train_dir = v;
    if (const char* v = std::getenv("GRAPHSEG_TEST_DIR")) c.test_dir = v;
    c.validate();
    return c;
}

// nlohmann::json dumps object keys sorted, so the hash is canonical.
inline std::uint64_t config_hash(const JobConfig& c) {
    return fnv1a(job_config_to_json(c).dump());
}

// Per-granularity defaults: the best rows of the paper's classification and
// segmentation tuning tables.
inline JobConfig default_config(const std::string& granularity) {
    JobConfig c;
    c.granularity = granularity;
    c.classifier.model_type = ModelType::SAGE;
    c.prompt.prompt_type = PromptType::point_and_box;
    if (granularity == "Truck") {
        c.detector.nms_radius = 4;
        c.detector.min_points = 512;
        c.graph.k = 32;
        c.prompt.box_threshold = 1.0;
        c.prompt.point_threshold = 1.0;
        c.prompt.point_samples = 20;
    } else if (granularity == "TruckCrane") {
        c.detector.nms_radius = 2;
        c.detector.min_points = 1024;
        c.graph.k = 32;
        c.prompt.box_threshold = 1.0;
        c.prompt.point_threshold = 0.8;
        c.prompt.point_samples = 15;
    } else if (granularity == "Low") {
        c.detector.nms_radius = 4;
        c.detector.min_points = 1024;
        c.graph.k = 32;
        c.prompt.box_threshold = 0.8;
        c.prompt.point_threshold = 1.0;
        c.prompt.point_samples = 20;
    } else if (granularity == "Medium") {
        c.detector.nms_radius = 6;
        c.detector.min_points = 1024;
        c.graph.k = 8;
        c.prompt.box_threshold = 1.0;
        c.prompt.point_threshold = 0.8;
        c.prompt.point_samples = 10;
    } else if (granularity == "High") {
        c.detector.nms_radius = 4;
        c.detector.min_points = 512;
        c.graph.k = 16;
        c.prompt.box_threshold = 0.8;
        c.prompt.point_threshold = 0.8;
        c.prompt.point_samples = 15;
    } else {
        throw ConfigError("no default config for granularity '" + granularity + "'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Backend construction: the mock logit provider gets the dataset's color keys
// for the selected granularity merged into its options.
// ---------------------------------------------------------------------------
inline Backends make_backends(const JobConfig& cfg, const DatasetMeta& meta) {
    auto& reg = default_registry();
    nlohmann::json logit_opts = cfg.logit_options;
    if (!logit_opts.contains("color_keys")) {
        const auto it = meta.color_keys.find(cfg.granularity);
        if (it != meta.color_keys.end()) {
            nlohmann::json keys = nlohmann::json::object();
            for (const auto& [cls, rgb] : it->second) keys[cls] = {rgb[0], rgb[1], rgb[2]};
            logit_opts["color_keys"] = keys;
        }
    }
    Backends b;
    b.detector = reg.make_detector(cfg.detector_backend, cfg.detector_options);
    b.logits = reg.make_logits(cfg.logit_backend, logit_opts);
    b.segmenter = reg.make_segmenter(cfg.segmenter_backend, cfg.segmenter_options);
    return b;
}

// Logit prompts: the granularity's non-background class names, in class order.
inline std::vector<std::string> enhancement_prompts(const JobConfig& cfg, const GranularityMap& gmap) {
    if (!cfg.enhancement) return {};
    std::vector<std::string> prompts;
    for (int c = 0; c < gmap.class_count; ++c) {
        if (cfg.prompt.background_class && c == *cfg.prompt.background_class) continue;
        prompts.push_back(gmap.class_names[c]);
    }
    return prompts;
}

// ---------------------------------------------------------------------------
// Timing: inference is split into node classification (detect through prompt
// construction) and segmentation; total is their sum.
// ---------------------------------------------------------------------------
struct TimingRecord {
    double train_seconds = 0.0;
    double classification_seconds = 0.0;
    double segmentation_seconds = 0.0;
    double total_seconds = 0.0;
};

struct InferOutcome {
    SegmentationResult segmentation;
    TimingRecord timing;
    NodeProbabilities probs;
    PromptSet prompts;
    SceneGraph graph;
    std::vector<InterestPoint> points;
};

inline InferOutcome run_infer(const Checkpoint& ckpt, const Image& image, const Backends& backends,
                              const PromptConfig& prompt_cfg, std::uint64_t seed) {
    validate_checkpoint_compat(ckpt, *backends.detector);
    InferOutcome out;
    StopWatch cls_watch;
    out.points = backends.detector->detect(image, ckpt.detector_cfg, hash_combine(seed, 1));
    if (out.points.empty()) throw EmptyDetectionError("detector returned no points");
    std::vector<LogitMap> maps;
    maps.reserve(ckpt.prompts.size());
    for (const auto& prompt : ckpt.prompts) maps.push_back(backends.logits->logit_map(image, prompt));
    const auto enhanced = enhance_points(out.points, maps);
    GraphBuildConfig gc = ckpt.graph_cfg;
    gc.mode = GraphBuildConfig::Mode::inference;
    out.graph = build_graph(enhanced, gc, hash_combine(seed, 2),
                            static_cast<int>(ckpt.prompts.size()), image.width, image.height);
    out.probs = forward(ckpt.model, out.graph, ForwardMode::eval);
    out.prompts = build_prompts(out.probs, out.graph, prompt_cfg, hash_combine(seed, 3));
    out.timing.classification_seconds = cls_watch.seconds();

    StopWatch seg_watch;
    const int background = prompt_cfg.background_class.value_or(0);
    out.segmentation = run_segmentation(image, out.prompts, *backends.segmenter, background);
    out.timing.segmentation_seconds = seg_watch.seconds();
    out.timing.total_seconds = out.timing.classification_seconds + out.timing.segmentation_seconds;
    out.segmentation.prompt_config_hash = fnv1a(to_string(prompt_cfg.prompt_type)) ^
                                          fnv1a(std::to_string(prompt_cfg.point_threshold)) ^
                                          fnv1a(std::to_string(prompt_cfg.box_threshold));
    return out;
}

// ---------------------------------------------------------------------------
// Training entry: selects the support set, runs the few-shot loop, returns a
// self-describing checkpoint plus a structured report.
// ---------------------------------------------------------------------------
struct TrainRun {
    Checkpoint checkpoint;
    TrainingReport report;
    std::vector<int> support_indices;
    std::uint64_t cfg_hash = 0;
};

inline TrainRun run_train(const JobConfig& cfg, const Dataset& train_ds, const Backends& backends,
                          std::vector<int> support_indices = {}) {
    const auto& gmap = train_ds.meta().granularity(cfg.granularity);
    if (support_indices.empty()) {
        if (!cfg.support_indices.empty()) {
            support_indices = cfg.support_indices;
        } else {
            support_indices = sample_splits(train_ds.size(), cfg.support_count, 1, cfg.seed)[0].support;
        }
    }
    for (int idx : support_indices)
        if (idx < 0 || idx >= train_ds.size())
            throw ConfigError("support index " + std::to_string(idx) + " outside dataset");

    std::vector<SupportSample> support;
    support.reserve(support_indices.size());
    for (int idx : support_indices) {
        SupportSample s;
        s.image = train_ds.load_image(idx);
        s.mask = remap_granularity(train_ds.load_mask(idx), gmap);
        support.push_back(std::move(s));
    }

    TrainOptions opt;
    opt.detector = cfg.detector;
    opt.graph = cfg.graph;
    opt.graph_aug = cfg.graph_aug;
    opt.classifier = cfg.classifier;
    opt.classifier.num_classes = gmap.class_count;
    opt.classifier.input_dim = 0;  // resolved from the backend
    opt.train = cfg.train;
    opt.train.seed = cfg.seed;
    opt.prompts = enhancement_prompts(cfg, gmap);
    opt.image_augmentation = cfg.image_augmentation;
    opt.graph_augmentation = cfg.graph_augmentation;

    auto result = train_few_shot(support, backends, opt);

    TrainRun run;
    run.checkpoint.model = std::move(result.model);
    run.checkpoint.graph_cfg = cfg.graph;
    run.checkpoint.detector_cfg = cfg.detector;
    run.checkpoint.class_names = gmap.class_names;
    run.checkpoint.prompts = enhancement_prompts(cfg, gmap);
    run.checkpoint.descriptor_dim = backends.detector->descriptor_dim();
    run.report = std::move(result.report);
    run.support_indices = std::move(support_indices);
    run.cfg_hash = config_hash(cfg);
    return run;
}

inline nlohmann::ordered_json training_report_json(const TrainRun& run, const JobConfig& cfg) {
    nlohmann::ordered_json j;
    j["config_hash"] = run.cfg_hash;
    j["seed"] = cfg.seed;
    j["granularity"] = cfg.granularity;
    j["support_indices"] = run.support_indices;
    j["epochs_configured"] = run.report.epochs_configured;
    j["epochs_run"] = run.report.epochs_run;
    j["best_epoch"] = run.report.best_epoch;
    j["best_loss"] = run.report.best_loss;
    j["loss_curve"] = run.report.loss_curve;
    j["warnings"] = run.report.warnings;
    j["train_seconds"] = run.report.train_seconds;
    return j;
}

// ---------------------------------------------------------------------------
// Evaluation: per-image J/F/Dice/J&F plus node F1, aggregated per fold
// (checkpoint) and across folds. A small worker pool fans out over images;
// per-image seeds are keyed by (job seed, image index) so the worker count
// never changes results.
// ---------------------------------------------------------------------------
struct ImageEval {
    int index = 0;
    double j = 0, f = 0, dice = 0, j_and_f = 0, node_f1 = 0;
    TimingRecord timing;
    bool failed = false;
    std::string error;
};

struct FoldEval {
    int fold = 0;
    std::vector<ImageEval> images;
    double mean_j = 0, mean_f = 0, mean_dice = 0, mean_j_and_f = 0, mean_f1 = 0;
    int failures = 0;
};

struct EvalAggregate {
    std::vector<FoldEval> folds;
    double mean_j = 0, mean_f = 0, mean_dice = 0, mean_j_and_f = 0, mean_f1 = 0;
    double std_j = 0, std_f = 0, std_dice = 0, std_j_and_f = 0, std_f1 = 0;
};

namespace detail {

inline void finalize_fold(FoldEval& fold) {
    double sj = 0, sf = 0, sd = 0, sjf = 0, sf1 = 0;
    int n = 0;
    for (const auto& im : fold.images) {
        if (im.failed) {
            ++fold.failures;
            continue;
        }
        sj += im.j;
        sf += im.f;
        sd += im.dice;
        sjf += im.j_and_f;
        sf1 += im.node_f1;
        ++n;
    }
    if (n > 0) {
        fold.mean_j = sj / n;
        fold.mean_f = sf / n;
        fold.mean_dice = sd / n;
        fold.mean_j_and_f = sjf / n;
        fold.mean_f1 = sf1 / n;
    }
}

inline void finalize_aggregate(EvalAggregate& agg) {
    const int k = static_cast<int>(agg.folds.size());
    if (k == 0) return;
    auto accumulate = [&](auto getter, double& mean, double& stdev) {
        double s = 0;
        for (const auto& f : agg.folds) s += getter(f);
        mean = s / k;
        double v = 0;
        for (const auto& f : agg.folds) v += (getter(f) - mean) * (getter(f) - mean);
        stdev = std::sqrt(v / k);
    };
    accumulate([](const FoldEval& f) { return f.mean_j; }, agg.mean_j, agg.std_j);
    accumulate([](const FoldEval& f) { return f.mean_f; }, agg.mean_f, agg.std_f);
    accumulate([](const FoldEval& f) { return f.mean_dice; }, agg.mean_dice, agg.std_dice);
    accumulate([](const FoldEval& f) { return f.mean_j_and_f; }, agg.mean_j_and_f, agg.std_j_and_f);
    accumulate([](const FoldEval& f) { return f.mean_f1; }, agg.mean_f1, agg.std_f1);
}

}  // namespace detail

inline FoldEval evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& test_ds,
                                    const std::vector<int>& indices, const JobConfig& cfg,
                                    const Backends& backends, int fold_id = 0) {
    const auto& gmap = test_ds.meta().granularity(cfg.granularity);
    std::vector<int> fg_classes;
    for (int c = 0; c < gmap.class_count; ++c)
        if (!cfg.prompt.background_class || c != *cfg.prompt.background_class) fg_classes.push_back(c);

    FoldEval fold;
    fold.fold = fold_id;
    fold.images.resize(indices.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= indices.size()) return;
            ImageEval& ev = fold.images[i];
            ev.index = indices[i];
            try {
                const Image image = test_ds.load_image(indices[i]);
                const LabelMask gt = remap_granularity(test_ds.load_mask(indices[i]), gmap);
                const auto outcome = run_infer(ckpt, image, backends, cfg.prompt,
                                               hash_combine(cfg.seed, indices[i]));
                const auto report = evaluate_image(outcome.segmentation.fused, gt, fg_classes);
                ev.j = report.mean_j;
                ev.f = report.mean_f;
                ev.dice = report.mean_dice;
                ev.j_and_f = report.j_and_f;
                const auto gt_labels = extract_labels(outcome.points, gt, gmap.class_count);
                ev.node_f1 = node_f1(outcome.probs.labels, gt_labels, gmap.class_count);
                ev.timing = outcome.timing;
            } catch (const std::exception& e) {
                ev.failed = true;
                ev.error = e.what();
            }
        }
    };
    const int workers = std::max(1, std::min<int>(cfg.eval_workers, static_cast<int>(indices.size())));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    detail::finalize_fold(fold);
    return fold;
}

// One fold per checkpoint; aggregate is mean +/- std over folds.
inline EvalAggregate run_evaluate(const std::vector<Checkpoint>& checkpoints, const Dataset& test_ds,
                                  const std::vector<int>& indices, const JobConfig& cfg,
                                  const Backends& backends) {
    if (checkpoints.empty()) throw ConfigError("run_evaluate needs at least one checkpoint");
    EvalAggregate agg;
    for (std::size_t f = 0; f < checkpoints.size(); ++f)
        agg.folds.push_back(evaluate_checkpoint(checkpoints[f], test_ds, indices, cfg, backends,
                                                static_cast<int>(f)));
    detail::finalize_aggregate(agg);
    return agg;
}

inline std::vector<int> all_indices(const Dataset& ds) {
    std::vector<int> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

// Few-shot k-fold protocol: train one model per disjoint support draw, then
// evaluate every fold on the same test set.
inline EvalAggregate run_protocol(const JobConfig& cfg, const Dataset& train_ds, const Dataset& test_ds,
                                  const std::vector<int>& test_indices, const Backends& backends,
                                  int n_support, int folds) {
    const auto splits = sample_splits(train_ds.size(), n_support, folds, cfg.seed);
    EvalAggregate agg;
    for (const auto& split : splits) {
        const auto run = run_train(cfg, train_ds, backends, split.support);
        agg.folds.push_back(evaluate_checkpoint(run.checkpoint, test_ds, test_indices, cfg, backends,
                                                split.fold));
    }
    detail::finalize_aggregate(agg);
    return agg;
}

// CSV with the few-shot table layout: one row per support count, one column
// per granularity, J&F values x100.
inline std::string few_shot_table_csv(const std::vector<int>& shots,
                                      const std::vector<std::string>& granularities,
                                      const std::vector<std::vector<double>>& j_and_f) {
    std::string csv = "samples";
    for (const auto& g : granularities) csv += "," + g;
    csv += "\n";
    for (std::size_t r = 0; r < shots.size(); ++r) {
        csv += std::to_string(shots[r]);
        for (std::size_t c = 0; c < granularities.size(); ++c) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), ",%.1f", j_and_f[r][c] * 100.0);
            csv += buf;
        }
        csv += "\n";
    }
    return csv;
}

inline std::string eval_summary_csv(const EvalAggregate& agg) {
    std::string csv = "fold,j,f,dice,j_and_f,node_f1,failures\n";
    char buf[160];
    for (const auto& f : agg.folds) {
        std::snprintf(buf, sizeof(buf), "%d,%.2f,%.2f,%.2f,%.2f,%.2f,%d\n", f.fold, f.mean_j * 100,
                      f.mean_f * 100, f.mean_dice * 100, f.mean_j_and_f * 100, f.mean_f1 * 100,
                      f.failures);
        csv += buf;
    }
    std::snprintf(buf, sizeof(buf), "mean,%.2f,%.2f,%.2f,%.2f,%.2f,\nstd,%.2f,%.2f,%.2f,%.2f,%.2f,\n",
                  agg.mean_j * 100, agg.mean_f * 100, agg.mean_dice * 100, agg.mean_j_and_f * 100,
                  agg.mean_f1 * 100, agg.std_j * 100, agg.std_f * 100, agg.std_dice * 100,
                  agg.std_j_and_f * 100, agg.std_f1 * 100);
    csv += buf;
    return csv;
}

inline nlohmann::ordered_json image_eval_record(const ImageEval& ev, int fold) {
    nlohmann::ordered_json j;
    j["fold"] = fold;
    j["index"] = ev.index;
    j["failed"] = ev.failed;
    if (ev.failed) {
        j["error"] = ev.error;
    } else {
        j["j"] = ev.j;
        j["f"] = ev.f;
        j["dice"] = ev.dice;
        j["j_and_f"] = ev.j_and_f;
        j["node_f1"] = ev.node_f1;
        j["classification_seconds"] = ev.timing.classification_seconds;
        j["segmentation_seconds"] = ev.timing.segmentation_seconds;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Random hyperparameter search. Candidate sets follow the paper's tuning
// tables; the classification stage is scored by node F1, the segmentation
// stage by Dice.
// ---------------------------------------------------------------------------
struct SearchSpace {
    std::vector<int> nms_radius = {2, 4, 6};
    std::vector<int> min_points = {512, 1024, 2048};
    std::vector<int> k = {8, 16, 32};
    std::vector<int> hidden_dim = {256, 512, 1024};
    std::vector<int> integration_dim = {128, 256, 512};
    std::vector<double> sp_threshold = {1e-4, 2e-4, 5e-4};
    std::vector<ModelType> model_type = {ModelType::GCN, ModelType::GAT, ModelType::SAGE};
    std::vector<double> dropout = {0.1, 0.2, 0.3};
    std::vector<double> edge_dropout = {0.3, 0.5, 0.8};
    std::vector<PromptType> prompt_type = {PromptType::point, PromptType::box, PromptType::point_and_box};
    std::vector<double> point_threshold = {0.6, 0.8, 1.0};
    std::vector<double> box_threshold = {0.6, 0.8, 1.0};
    std::vector<int> point_samples = {5, 10, 15, 20};
};

enum class TuneStage { classification, segmentation };

// One sampled trial per row; pure function of (space, trials, seed).
inline std::vector<JobConfig> sample_trial_configs(const JobConfig& base, const SearchSpace& space,
                                                   TuneStage stage, int trials, std::uint64_t seed) {
    std::vector<JobConfig> configs;
    Rng rng(seed);
    auto pick = [&rng](const auto& candidates) {
        return candidates[rng.uniform_index(candidates.size())];
    };
    for (int t = 0; t < trials; ++t) {
        JobConfig c = base;
        if (stage == TuneStage::classification) {
            c.detector.nms_radius = pick(space.nms_radius);
            c.detector.min_points = pick(space.min_points);
            c.graph.k = pick(space.k);
            c.classifier.hidden_dim = pick(space.hidden_dim);
            c.classifier.integration_dim = pick(space.integration_dim);
            c.detector.confidence_threshold = pick(space.sp_threshold);
            c.classifier.model_type = pick(space.model_type);
            c.classifier.dropout = pick(space.dropout);
            c.classifier.edge_dropout = pick(space.edge_dropout);
        } else {
            c.prompt.prompt_type = pick(space.prompt_type);
            c.prompt.point_threshold = pick(space.point_threshold);
            c.prompt.box_threshold = pick(space.box_threshold);
            c.prompt.point_samples = pick(space.point_samples);
        }
        configs.push_back(std::move(c));
    }
    return configs;
}

struct TuneTrial {
    int trial = 0;
    JobConfig config;
    double score_mean = 0.0;
    double score_std = 0.0;
    bool failed = false;
    std::string error;
};

struct TuneResult {
    TuneStage stage = TuneStage::classification;
    std::vector<TuneTrial> ranked;  // best first; failed trials last
    int best_trial = -1;
};

inline TuneResult run_tune(const JobConfig& base, const Dataset& train_ds, const Dataset& test_ds,
                           const std::vector<int>& train_pool, const std::vector<int>& test_pool,
                           const Backends& backends, TuneStage stage, int trials, std::uint64_t seed,
                           const SearchSpace& space = {}) {
    for (int i : train_pool)
        for (int j : test_pool)
            if (&train_ds == &test_ds && i == j)
                throw ConfigError("tuning train and test pools must be disjoint");
    auto configs = sample_trial_configs(base, space, stage, trials, seed);
    TuneResult result;
    result.stage = stage;
    for (int t = 0; t < trials; ++t) {
        TuneTrial trial;
        trial.trial = t;
        trial.config = configs[t];
        try {
            Backends trial_backends = backends;
            const auto run = run_train(configs[t], train_ds, trial_backends,
                                       std::vector<int>(train_pool.begin(), train_pool.end()));
            const auto fold = evaluate_checkpoint(run.checkpoint, test_ds, test_pool, configs[t],
                                                  trial_backends);
            if (static_cast<int>(test_pool.size()) - fold.failures <= 0)
                throw PipelineError("every evaluation image failed");
            std::vector<double> scores;
            for (const auto& im : fold.images)
                if (!im.failed) scores.push_back(stage == TuneStage::classification ? im.node_f1 : im.dice);
            double mean = 0;
            for (double s : scores) mean += s;
            mean /= scores.size();
            double var = 0;
            for (double s : scores) var += (s - mean) * (s - mean);
            trial.score_mean = mean;
            trial.score_std = std::sqrt(var / scores.size());
        } catch (const std::exception& e) {
            trial.failed = true;
            trial.error = e.what();
        }
        result.ranked.push_back(std::move(trial));
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(), [](const TuneTrial& a, const TuneTrial& b) {
        if (a.failed != b.failed) return !a.failed;
        return a.score_mean > b.score_mean;
    });
    if (!result.ranked.empty() && !result.ranked.front().failed) result.best_trial = result.ranked.front().trial;
    return result;
}

inline std::string tune_table_csv(const TuneResult& result) {
    std::string csv =
        result.stage == TuneStage::classification
            ? "rank,trial,NR,I,k,HD,ID,SPT,MT,DR,DRE,score_mean,score_std,failed\n"
            : "rank,trial,SP,BT,PT,SPS,score_mean,score_std,failed\n";
    int rank = 0;
    char buf[256];
    for (const auto& t : result.ranked) {
        const auto& c = t.config;
        if (result.stage == TuneStage::classification)
            std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%d,%d,%d,%.0e,%s,%.1f,%.1f,%.4f,%.4f,%d\n", rank,
                          t.trial, c.detector.nms_radius, c.detector.min_points, c.graph.k,
                          c.classifier.hidden_dim, c.classifier.integration_dim,
                          c.detector.confidence_threshold, to_string(c.classifier.model_type).c_str(),
                          c.classifier.dropout, c.classifier.edge_dropout, t.score_mean, t.score_std,
                          t.failed ? 1 : 0);
        else
            std::snprintf(buf, sizeof(buf), "%d,%d,%s,%.1f,%.1f,%d,%.4f,%.4f,%d\n", rank, t.trial,
                          to_string(c.prompt.prompt_type).c_str(), c.prompt.box_threshold,
                          c.prompt.point_threshold, c.prompt.point_samples, t.score_mean, t.score_std,
                          t.failed ? 1 : 0);
        csv += buf;
        ++rank;
    }
    return csv;
}

// ---------------------------------------------------------------------------
// Ablation: enhancement on/off (off drops the appended features entirely),
// prompt types, and point-sample counts. Each toggle trains and evaluates.
// ---------------------------------------------------------------------------
struct AblationToggle {
    std::string name;
    std::optional<bool> enhancement;
    std::optional<PromptType> prompt_type;
    std::optional<int> point_samples;
};

inline std::vector<AblationToggle> default_ablation_toggles() {
    return {{"enhancement_on", true, std::nullopt, std::nullopt},
            {"enhancement_off", false, std::nullopt, std::nullopt},
            {"prompt_points_only", std::nullopt, PromptType::point, std::nullopt},
            {"prompt_box_only", std::nullopt, PromptType::box, std::nullopt}};
}

struct AblationRow {
    std::string name;
    double f1 = 0, dice = 0, j_and_f = 0;
    bool failed = false;
    std::string error;
};

inline std::vector<AblationRow> run_ablation(const JobConfig& base, const Dataset& train_ds,
                                             const Dataset& test_ds, const std::vector<int>& test_indices,
                                             const std::vector<AblationToggle>& toggles) {
    std::vector<AblationRow> rows;
    for (const auto& toggle : toggles) {
        JobConfig cfg = base;
        if (toggle.enhancement) cfg.enhancement = *toggle.enhancement;
        if (toggle.prompt_type) cfg.prompt.prompt_type = *toggle.prompt_type;
        if (toggle.point_samples) cfg.prompt.point_samples = *toggle.point_samples;
        AblationRow row;
        row.name = toggle.name;
        try {
            const auto backends = make_backends(cfg, train_ds.meta());
            const auto run = run_train(cfg, train_ds, backends);
            const auto fold = evaluate_checkpoint(run.checkpoint, test_ds, test_indices, cfg, backends);
            row.f1 = fold.mean_f1;
            row.dice = fold.mean_dice;
            row.j_and_f = fold.mean_j_and_f;
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
    std::string csv = "toggle,f1,dice,j_and_f,failed\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%.2f,%d\n", r.name.c_str(), r.f1 * 100,
                      r.dice * 100, r.j_and_f * 100, r.failed ? 1 : 0);
        csv += buf;
    }
    return csv;
}

}  // namespace graphseg
