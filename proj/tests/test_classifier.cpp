#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "graphseg/mock_backends.hpp"
#include "graphseg/training.hpp"

using namespace graphseg;

namespace {

SceneGraph random_graph(int n, int dim, int k, Rng& rng) {
    std::vector<EnhancedPoint> pts;
    for (int i = 0; i < n; ++i) {
        EnhancedPoint p;
        p.x = rng.uniform(0, 100);
        p.y = rng.uniform(0, 100);
        for (int d = 0; d < dim; ++d) p.feat.push_back(rng.uniform(-1, 1));
        pts.push_back(std::move(p));
    }
    GraphBuildConfig cfg;
    cfg.k = k;
    return build_graph(pts, cfg, rng.next());
}

ClassifierConfig tiny_config(ModelType type, int input_dim, int classes = 3) {
    ClassifierConfig cfg;
    cfg.model_type = type;
    cfg.hidden_dim = 8;
    cfg.integration_dim = 6;
    cfg.dropout = 0.0;
    cfg.edge_dropout = 0.0;
    cfg.num_classes = classes;
    cfg.input_dim = input_dim;
    return cfg;
}

double model_loss(const ClassifierModel& model, const SceneGraph& graph,
                  const std::vector<int>& labels, const Eigen::VectorXd& weights) {
    const auto lp = model.log_probs(graph, /*training=*/false, nullptr);
    return weighted_nll(lp, labels, weights);
}

// Three vertical color bands with mild texture noise: a separable 3-class
// scene for the mock backends.
std::pair<Image, LabelMask> band_scene(int w, int h, std::uint64_t seed) {
    Image img(w, h);
    LabelMask mask(w, h);
    const std::array<std::array<std::uint8_t, 3>, 3> colors = {{{60, 70, 90}, {200, 60, 50}, {60, 170, 80}}};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int band = std::min(2, 3 * x / w);
            std::array<std::uint8_t, 3> c;
            for (int ch = 0; ch < 3; ++ch) {
                const double noise = hash_noise(
                    hash_combine(seed, (static_cast<std::uint64_t>(y) * w + x) * 3 + ch), 5.0);
                c[ch] = static_cast<std::uint8_t>(std::clamp(colors[band][ch] + noise, 0.0, 255.0));
            }
            img.set_rgb(x, y, c);
            mask.set(x, y, static_cast<std::uint8_t>(band));
        }
    return {img, mask};
}

Backends band_backends() {
    Backends b;
    b.detector = std::make_shared<MockGridDetector>();
    MockLogitConfig lc;
    lc.color_keys["red_band"] = {200, 60, 50};
    lc.color_keys["green_band"] = {60, 170, 80};
    b.logits = std::make_shared<MockColorKeyLogits>(lc);
    b.segmenter = std::make_shared<MockRegionSegmenter>();
    return b;
}

TrainOptions band_options(int epochs, std::uint64_t seed) {
    TrainOptions opt;
    opt.detector.nms_radius = 4;
    opt.detector.min_points = 100;
    opt.graph.k = 6;
    opt.classifier = tiny_config(ModelType::SAGE, 0, 3);
    opt.classifier.hidden_dim = 32;
    opt.classifier.integration_dim = 16;
    opt.classifier.dropout = 0.1;
    opt.classifier.edge_dropout = 0.3;
    opt.classifier.input_dim = 0;  // resolved from the backend
    opt.train.epochs = epochs;
    opt.train.seed = seed;
    opt.train.early_stopping = false;
    opt.prompts = {"red_band", "green_band"};
    return opt;
}

}  // namespace

TEST_CASE("extract_labels: coordinate convention and clamping") {
    LabelMask mask(32, 32, 0);
    mask.set(10, 20, 4);  // x=10 (column), y=20 (row)
    mask.set(31, 31, 2);
    std::vector<InterestPoint> pts(3);
    pts[0] = {10.2, 19.8, {}, 1.0};   // rounds to (10, 20)
    pts[1] = {31.6, 31.6, {}, 1.0};   // clamps to (31, 31)
    pts[2] = {0.0, 0.0, {}, 1.0};
    const auto labels = extract_labels(pts, mask, 5);
    CHECK(labels == std::vector<int>{4, 2, 0});

    const LabelMask zeros(32, 32, 0);
    CHECK(extract_labels(pts, zeros, 5) == std::vector<int>{0, 0, 0});

    LabelMask bad(32, 32, 0);
    bad.set(3, 3, 7);
    CHECK_THROWS_AS(extract_labels(pts, bad, 5), LabelRangeError);
}

TEST_CASE("class_weights: inverse frequency, normalized") {
    const auto w = class_weights({0, 0, 0, 1}, 2);
    CHECK(w(0) == Catch::Approx(0.25));
    CHECK(w(1) == Catch::Approx(0.75));

    const auto balanced = class_weights({0, 1}, 2);
    CHECK(balanced(0) == Catch::Approx(0.5));
    CHECK(balanced(1) == Catch::Approx(0.5));

    const auto absent = class_weights({0, 0, 0}, 3);
    CHECK(absent(0) == 1.0);
    CHECK(absent(1) == 0.0);
    CHECK(absent(2) == 0.0);

    CHECK_THROWS_AS(class_weights({}, 2), TrainingError);
}

TEST_CASE("class_weights: ratio property over random label multisets") {
    Rng rng(314);
    for (int trial = 0; trial < 20; ++trial) {
        const int classes = 2 + static_cast<int>(rng.uniform_index(5));
        std::vector<int> labels;
        std::vector<int> counts(classes, 0);
        const int n = 5 + static_cast<int>(rng.uniform_index(60));
        for (int i = 0; i < n; ++i) {
            const int c = static_cast<int>(rng.uniform_index(classes));
            labels.push_back(c);
            ++counts[c];
        }
        const auto w = class_weights(labels, classes);
        CHECK(w.sum() == Catch::Approx(1.0));
        for (int a = 0; a < classes; ++a)
            for (int b = 0; b < classes; ++b) {
                if (counts[a] == 0 || counts[b] == 0) continue;
                CHECK(w(a) / w(b) == Catch::Approx(static_cast<double>(counts[b]) / counts[a]));
            }
    }
}

TEST_CASE("node_f1: reference values") {
    CHECK(node_f1({0, 1, 2}, {0, 1, 2}, 3) == 1.0);
    CHECK(node_f1({1, 1, 0, 0}, {0, 0, 1, 1}, 2) == 0.0);
    CHECK(node_f1({0, 1, 1, 1}, {0, 0, 1, 1}, 2) == Catch::Approx((2.0 / 3.0 + 0.8) / 2.0));
    CHECK_THROWS_AS(node_f1({}, {}, 2), MetricError);
    CHECK_THROWS_AS(node_f1({0}, {0, 1}, 2), MetricError);
}

TEST_CASE("forward: eval mode is deterministic and normalized") {
    Rng rng(21);
    for (const auto type : {ModelType::GCN, ModelType::SAGE, ModelType::GAT}) {
        const auto graph = random_graph(30, 5, 4, rng);
        const ClassifierModel model(tiny_config(type, 5), 99);
        const auto a = forward(model, graph, ForwardMode::eval);
        const auto b = forward(model, graph, ForwardMode::eval);
        REQUIRE(a.probs == b.probs);
        for (int v = 0; v < a.node_count(); ++v) {
            CHECK(a.probs.row(v).sum() == Catch::Approx(1.0).margin(1e-5));
            for (int c = 0; c < a.num_classes(); ++c) {
                CHECK(a.probs(v, c) >= 0.0);
                CHECK(a.probs(v, c) <= 1.0);
            }
        }
    }
}

TEST_CASE("forward: train mode distributions stay normalized") {
    Rng rng(22);
    ClassifierConfig cfg = tiny_config(ModelType::SAGE, 4);
    cfg.dropout = 0.3;
    cfg.edge_dropout = 0.5;
    const ClassifierModel model(cfg, 5);
    const auto graph = random_graph(25, 4, 3, rng);
    Rng fwd_rng(1);
    const auto np = forward(model, graph, ForwardMode::train, &fwd_rng);
    for (int v = 0; v < np.node_count(); ++v)
        CHECK(np.probs.row(v).sum() == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("forward: permutation equivariance in eval mode") {
    Rng rng(23);
    for (const auto type : {ModelType::GCN, ModelType::SAGE, ModelType::GAT}) {
        for (int trial = 0; trial < 7; ++trial) {
            const int n = 10 + static_cast<int>(rng.uniform_index(30));
            const auto graph = random_graph(n, 5, 3, rng);
            const ClassifierModel model(tiny_config(type, 5), rng.next());
            const auto base = model.log_probs(graph, false, nullptr);

            std::vector<int> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(perm);
            std::vector<int> inv(n);
            for (int i = 0; i < n; ++i) inv[perm[i]] = i;

            SceneGraph permuted = graph;
            for (int i = 0; i < n; ++i) permuted.nodes[i] = graph.nodes[perm[i]];
            permuted.edges.clear();
            permuted.weights.clear();
            for (const auto& [u, v] : graph.edges) {
                const int a = std::min(inv[u], inv[v]), b = std::max(inv[u], inv[v]);
                permuted.edges.emplace_back(a, b);
            }
            std::sort(permuted.edges.begin(), permuted.edges.end());
            for (const auto& [u, v] : permuted.edges)
                permuted.weights.push_back(descriptor_distance(permuted.nodes[u], permuted.nodes[v]));

            const auto out = model.log_probs(permuted, false, nullptr);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < 3; ++c)
                    REQUIRE(out(i, c) == Catch::Approx(base(perm[i], c)).margin(1e-5));
        }
    }
}

TEST_CASE("forward: single-node graph still yields a distribution") {
    // Two far nodes with k=1 so the clamp path leaves a single edge; then a
    // one-node slice via augmentation is impossible, so test the direct path:
    // a 2-node graph where one node sees only itself through SAGE means.
    std::vector<EnhancedPoint> pts(2);
    pts[0].x = 0;
    pts[0].y = 0;
    pts[0].feat = {1.0, -2.0};
    pts[1].x = 50;
    pts[1].y = 50;
    pts[1].feat = {0.5, 0.5};
    GraphBuildConfig gc;
    gc.k = 1;
    auto graph = build_graph(pts, gc, 0);
    graph.edges.clear();  // isolated nodes
    graph.weights.clear();
    for (const auto type : {ModelType::GCN, ModelType::SAGE, ModelType::GAT}) {
        const ClassifierModel model(tiny_config(type, 2), 3);
        const auto np = forward(model, graph, ForwardMode::eval);
        for (int v = 0; v < 2; ++v) CHECK(np.probs.row(v).sum() == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("forward: input dimension mismatch is a config error") {
    Rng rng(24);
    const auto graph = random_graph(10, 4, 3, rng);
    const ClassifierModel model(tiny_config(ModelType::SAGE, 7), 1);
    CHECK_THROWS_AS(forward(model, graph, ForwardMode::eval), ConfigError);
}

TEST_CASE("gradient check: analytic backward matches central differences") {
    Rng rng(25);
    for (const auto type : {ModelType::GCN, ModelType::SAGE, ModelType::GAT}) {
        SceneGraph graph = random_graph(10, 5, 3, rng);
        ClassifierModel model(tiny_config(type, 5), rng.next());
        std::vector<int> labels;
        for (int i = 0; i < 10; ++i) labels.push_back(static_cast<int>(rng.uniform_index(3)));
        const auto weights = class_weights(labels, 3);

        nn::Workspace ws;
        const auto lp = model.log_probs(graph, false, nullptr, &ws);
        Eigen::MatrixXd d_lp;
        weighted_nll(lp, labels, weights, &d_lp);
        const auto grads = model.backward(ws, d_lp);

        REQUIRE(grads.size() == model.params().size());
        auto check_param = [&](std::size_t p, double eps) {
            auto& param = model.params()[p];
            for (Eigen::Index i = 0; i < param.size(); ++i) {
                const double saved = *(param.data() + i);
                *(param.data() + i) = saved + eps;
                const double plus = model_loss(model, graph, labels, weights);
                *(param.data() + i) = saved - eps;
                const double minus = model_loss(model, graph, labels, weights);
                *(param.data() + i) = saved;
                const double fd = (plus - minus) / (2 * eps);
                const double analytic = *(grads[p].data() + i);
                const double rel = std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
                REQUIRE(rel < 1e-3);
            }
        };
        // Final-layer parameters at eps=1e-4: no ReLU sits between them and the
        // loss, so the stated tolerance holds directly.
        check_param(model.params().size() - 2, 1e-4);  // mlp_w2
        check_param(model.params().size() - 1, 1e-4);  // mlp_b2
        // Every parameter at a smaller step that stays clear of ReLU kinks.
        for (std::size_t p = 0; p < model.params().size(); ++p) check_param(p, 1e-6);
    }
}

TEST_CASE("weighted_nll: value and gradient structure") {
    Eigen::MatrixXd lp(2, 2);
    lp << std::log(0.8), std::log(0.2), std::log(0.3), std::log(0.7);
    Eigen::VectorXd w(2);
    w << 0.25, 0.75;
    Eigen::MatrixXd d;
    const double loss = weighted_nll(lp, {0, 1}, w, &d);
    CHECK(loss == Catch::Approx((-0.25 * std::log(0.8) - 0.75 * std::log(0.7)) / 1.0));
    CHECK(d(0, 0) == Catch::Approx(-0.25));
    CHECK(d(1, 1) == Catch::Approx(-0.75));
    CHECK(d(0, 1) == 0.0);
}

TEST_CASE("augment_image: determinism, mirror mapping, identity") {
    const auto [img, mask] = band_scene(40, 36, 3);

    const auto a = augment_image(img, mask, 42);
    const auto b = augment_image(img, mask, 42);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);

    ImageAugmentOptions mirror_only{1.0, 1.0, 1.0};
    const auto m = augment_image(img, mask, 7, mirror_only);
    REQUIRE(m.second.width == mask.width);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            CHECK(m.second.at(x, y) == mask.at(mask.width - 1 - x, y));

    ImageAugmentOptions identity{0.0, 1.0, 1.0};
    const auto id = augment_image(img, mask, 9, identity);
    CHECK(id.first == img);
    CHECK(id.second == mask);
}

TEST_CASE("augment_image: crop keeps foreground or degrades to full frame") {
    Image img(48, 48, {50, 50, 50});
    LabelMask mask(48, 48, 0);
    mask.set(0, 0, 1);  // single foreground pixel in the corner
    ImageAugmentOptions tight{0.0, 0.6, 0.65};
    bool saw_identity = false, saw_fg = true;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto [ai, am] = augment_image(img, mask, seed, tight);
        if (am.width == 48 && am.height == 48) saw_identity = true;
        saw_fg = saw_fg && (am.count_nonzero() > 0 || (am.width == 48 && am.height == 48));
    }
    CHECK(saw_identity);  // some seeds exhaust 5 attempts and fall back
    CHECK(saw_fg);        // accepted crops always keep the foreground
}

TEST_CASE("train_few_shot: separable bands reach node F1 >= 0.95") {
    const auto [img, mask] = band_scene(96, 96, 11);
    auto opt = band_options(300, 5);
    const auto backends = band_backends();
    const auto result = train_few_shot({{img, mask}}, backends, opt);

    // Evaluate on the unaugmented support graph.
    const auto pts = backends.detector->detect(img, opt.detector, 777);
    std::vector<LogitMap> maps;
    for (const auto& p : opt.prompts) maps.push_back(backends.logits->logit_map(img, p));
    const auto enhanced = enhance_points(pts, maps);
    GraphBuildConfig gc = opt.graph;
    gc.mode = GraphBuildConfig::Mode::inference;
    const auto graph = build_graph(enhanced, gc, 0, static_cast<int>(opt.prompts.size()));
    const auto np = forward(result.model, graph, ForwardMode::eval);
    const auto gt = extract_labels(pts, mask, 3);
    CHECK(node_f1(np.labels, gt, 3) >= 0.95);

    // Loss decreases: mean over the last 10% of epochs < mean over the first 10%.
    const auto& curve = result.report.loss_curve;
    REQUIRE(curve.size() >= 20);
    const std::size_t tenth = curve.size() / 10;
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < tenth; ++i) {
        head += curve[i];
        tail += curve[curve.size() - 1 - i];
    }
    CHECK(tail / tenth < head / tenth);
}

TEST_CASE("train_few_shot: zero learning rate leaves parameters unchanged") {
    const auto [img, mask] = band_scene(64, 64, 13);
    auto opt = band_options(10, 3);
    opt.train.learning_rate = 0.0;
    opt.image_augmentation = false;
    opt.graph_augmentation = false;
    opt.graph.extra_pool = 0;  // freeze the training-mode neighbor draws
    opt.classifier.dropout = 0.0;
    opt.classifier.edge_dropout = 0.0;
    const auto backends = band_backends();

    const ClassifierModel reference(
        [&] {
            auto cfg = opt.classifier;
            cfg.input_dim = backends.detector->descriptor_dim() + 2;
            return cfg;
        }(),
        opt.train.seed);
    const auto result = train_few_shot({{img, mask}}, backends, opt);
    REQUIRE(result.model.params().size() == reference.params().size());
    for (std::size_t p = 0; p < reference.params().size(); ++p)
        REQUIRE(result.model.params()[p] == reference.params()[p]);

    // Without augmentation or dropout the per-epoch loss is constant.
    for (double v : result.report.loss_curve)
        CHECK(v == Catch::Approx(result.report.loss_curve[0]).epsilon(1e-12));
}

TEST_CASE("train_few_shot: deterministic per seed") {
    const auto [img, mask] = band_scene(64, 64, 17);
    const auto backends = band_backends();
    auto opt = band_options(25, 9);
    const auto a = train_few_shot({{img, mask}}, backends, opt);
    const auto b = train_few_shot({{img, mask}}, backends, opt);
    REQUIRE(a.report.loss_curve == b.report.loss_curve);
    for (std::size_t p = 0; p < a.model.params().size(); ++p)
        REQUIRE(a.model.params()[p] == b.model.params()[p]);
}

TEST_CASE("train_few_shot: empty support and failing samples") {
    CHECK_THROWS_AS(train_few_shot({}, band_backends(), band_options(10, 0)), TrainingError);

    // A sample whose image is below the detector minimum fails and is skipped;
    // with every sample failing, training errors out.
    Image tiny(16, 16, {10, 10, 10});
    LabelMask tiny_mask(16, 16, 0);
    auto opt = band_options(5, 1);
    opt.image_augmentation = false;
    CHECK_THROWS_AS(train_few_shot({{tiny, tiny_mask}}, band_backends(), opt), TrainingError);

    const auto [img, mask] = band_scene(64, 64, 19);
    const auto result = train_few_shot({{img, mask}, {tiny, tiny_mask}}, band_backends(), opt);
    REQUIRE_FALSE(result.report.warnings.empty());  // the bad sample is reported
    CHECK(result.report.epochs_run == 5);
}

TEST_CASE("epoch schedule: anchors and interpolation") {
    CHECK(epochs_for_class_count(2) == 500);
    CHECK(epochs_for_class_count(3) == 750);
    CHECK(epochs_for_class_count(8) == 1200);
    CHECK(epochs_for_class_count(16) == 1500);
    CHECK(epochs_for_class_count(22) == 2500);
    CHECK(epochs_for_class_count(5) == 930);    // between 3 and 8
    CHECK(epochs_for_class_count(12) == 1350);  // between 8 and 16
    CHECK(epochs_for_class_count(1) == 500);
    CHECK(epochs_for_class_count(30) == 2500);
}

TEST_CASE("checkpoint: round-trip and compatibility validation") {
    Rng rng(31);
    Checkpoint ckpt;
    ckpt.model = ClassifierModel(tiny_config(ModelType::GAT, 66, 4), 77);
    ckpt.graph_cfg.k = 12;
    ckpt.detector_cfg.min_points = 800;
    ckpt.class_names = {"background", "truck", "crane", "hook"};
    ckpt.prompts = {"truck", "crane", "hook"};
    ckpt.descriptor_dim = 63;  // 66 - 3 prompts

    const auto path = std::filesystem::temp_directory_path() / "graphseg_test_ckpt.gsck";
    save_checkpoint(ckpt, path.string());
    const auto loaded = load_checkpoint(path.string());
    CHECK(loaded.class_names == ckpt.class_names);
    CHECK(loaded.prompts == ckpt.prompts);
    CHECK(loaded.graph_cfg.k == 12);
    CHECK(loaded.detector_cfg.min_points == 800);
    CHECK(loaded.model.config().model_type == ModelType::GAT);
    REQUIRE(loaded.model.params().size() == ckpt.model.params().size());
    for (std::size_t p = 0; p < ckpt.model.params().size(); ++p)
        REQUIRE(loaded.model.params()[p] == ckpt.model.params()[p]);
    std::filesystem::remove(path);

    // The mock detector has D=66, the checkpoint claims 63.
    MockGridDetector detector;
    CHECK_THROWS_AS(validate_checkpoint_compat(ckpt, detector), CheckpointIncompatibleError);
    ckpt.descriptor_dim = 66;
    CheckpointIncompatibleError expected("x");
    CHECK_THROWS_AS(validate_checkpoint_compat(ckpt, detector), CheckpointIncompatibleError);
    ckpt.model = ClassifierModel(tiny_config(ModelType::GAT, 66 + 3, 4), 77);
    CHECK_NOTHROW(validate_checkpoint_compat(ckpt, detector));
}
