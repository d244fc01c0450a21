// graphseg: few-shot structure-informed part segmentation.
//
// Subcommands: synth (generate a synthetic dataset), train, infer, eval,
// tune, ablate. Exit codes: 0 success, 2 configuration error, 3 pipeline
// error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "graphseg/graphseg.hpp"

namespace {

namespace fs = std::filesystem;
using namespace graphseg;

JobConfig load_config_arg(const std::string& path) {
    if (path.empty()) throw ConfigError("--config is required");
    return load_job_config(path);
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os << content;
}

int cmd_synth(const std::string& out_dir, int count, int size, std::uint64_t seed, bool hollow) {
    const auto ds = generate_dataset(out_dir, count, size, size, seed, hollow);
    std::cout << "wrote " << ds.size() << " scenes to " << out_dir << "\n";
    return 0;
}

int cmd_train(const JobConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto train_ds = load_dataset(cfg.train_dir);
    const auto backends = make_backends(cfg, train_ds.meta());
    const auto run = run_train(cfg, train_ds, backends);

    const auto ckpt_path = out_dir + "/checkpoint.gsck";
    save_checkpoint(run.checkpoint, ckpt_path);
    write_text(out_dir + "/train_report.json", training_report_json(run, cfg).dump(2) + "\n");
    std::cout << "checkpoint: " << ckpt_path << "\n"
              << "epochs run: " << run.report.epochs_run << " (best " << run.report.best_epoch
              << ", loss " << run.report.best_loss << ")\n"
              << "train seconds: " << run.report.train_seconds << "\n";
    return 0;
}

int cmd_infer(const JobConfig& cfg, const std::string& ckpt_path, const std::string& image_path,
              const std::string& out_dir, bool dump_prompts, bool debug_masks) {
    fs::create_directories(out_dir);
    const auto ckpt = load_checkpoint(ckpt_path);
    DatasetMeta meta;
    if (!cfg.train_dir.empty() && fs::exists(cfg.train_dir + "/granularity.json"))
        meta = load_dataset(cfg.train_dir).meta();
    else if (!cfg.test_dir.empty() && fs::exists(cfg.test_dir + "/granularity.json"))
        meta = load_dataset(cfg.test_dir).meta();
    const auto backends = make_backends(cfg, meta);
    const auto image = read_png_rgb(image_path);

    const auto outcome = run_infer(ckpt, image, backends, cfg.prompt, cfg.seed);
    write_png_mask(out_dir + "/fused.png", outcome.segmentation.fused);

    nlohmann::ordered_json timing;
    timing["classification_seconds"] = outcome.timing.classification_seconds;
    timing["segmentation_seconds"] = outcome.timing.segmentation_seconds;
    timing["total_seconds"] = outcome.timing.total_seconds;
    write_text(out_dir + "/timing.json", timing.dump(2) + "\n");

    if (dump_prompts) {
        nlohmann::ordered_json pj;
        pj["prompt_type"] = to_string(outcome.prompts.config.prompt_type);
        pj["point_samples"] = outcome.prompts.point_samples;
        for (int c = 0; c < outcome.prompts.num_classes; ++c) {
            if (!outcome.prompts.class_presence[c]) continue;
            nlohmann::ordered_json cls;
            cls["class"] = c;
            for (int i = 0; i < outcome.prompts.point_counts[c]; ++i) {
                const auto p = outcome.prompts.point(c, i);
                cls["points"].push_back({p[0], p[1]});
            }
            if (outcome.prompts.has_box[c]) {
                const auto b = outcome.prompts.box(c);
                cls["box"] = {b.x_min, b.y_min, b.x_max, b.y_max};
            }
            pj["classes"].push_back(cls);
        }
        write_text(out_dir + "/prompts.json", pj.dump(2) + "\n");
    }
    if (debug_masks) {
        for (const auto& [cls, entry] : outcome.segmentation.per_class) {
            if (entry.failed) continue;
            write_png_mask(out_dir + "/class_" + std::to_string(cls) + ".png", entry.mask);
        }
    }
    std::cout << "fused mask: " << out_dir << "/fused.png\n"
              << "inference seconds: " << outcome.timing.total_seconds << " (class "
              << outcome.timing.classification_seconds << ", seg "
              << outcome.timing.segmentation_seconds << ")\n";
    return 0;
}

int cmd_eval(const JobConfig& cfg, const std::vector<std::string>& ckpt_paths,
             const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto test_ds = load_dataset(cfg.test_dir);
    const auto backends = make_backends(cfg, test_ds.meta());
    std::vector<Checkpoint> ckpts;
    for (const auto& p : ckpt_paths) ckpts.push_back(load_checkpoint(p));
    const auto agg = run_evaluate(ckpts, test_ds, all_indices(test_ds), cfg, backends);

    std::string records;
    for (const auto& fold : agg.folds)
        for (const auto& im : fold.images) records += image_eval_record(im, fold.fold).dump() + "\n";
    write_text(out_dir + "/eval_records.jsonl", records);
    const auto csv = eval_summary_csv(agg);
    write_text(out_dir + "/eval_summary.csv", csv);
    std::cout << csv;
    return 0;
}

int cmd_tune(const JobConfig& cfg, const std::string& stage_name, int trials, int train_pool_size,
             int test_pool_size, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto train_ds = load_dataset(cfg.train_dir);
    const auto test_ds = load_dataset(cfg.test_dir);
    const auto backends = make_backends(cfg, train_ds.meta());
    const TuneStage stage =
        stage_name == "segmentation" ? TuneStage::segmentation : TuneStage::classification;

    Rng rng(cfg.seed);
    std::vector<int> train_pool(train_ds.size());
    std::iota(train_pool.begin(), train_pool.end(), 0);
    rng.shuffle(train_pool);
    train_pool.resize(std::min<std::size_t>(train_pool.size(), train_pool_size));
    std::vector<int> test_pool(test_ds.size());
    std::iota(test_pool.begin(), test_pool.end(), 0);
    test_pool.resize(std::min<std::size_t>(test_pool.size(), test_pool_size));

    const auto result = run_tune(cfg, train_ds, test_ds, train_pool, test_pool, backends, stage,
                                 trials, cfg.seed);
    const auto csv = tune_table_csv(result);
    write_text(out_dir + "/tune_" + stage_name + ".csv", csv);
    std::cout << csv;
    return 0;
}

int cmd_ablate(const JobConfig& cfg, const std::string& out_dir, int test_limit) {
    fs::create_directories(out_dir);
    const auto train_ds = load_dataset(cfg.train_dir);
    const auto test_ds = load_dataset(cfg.test_dir);
    auto indices = all_indices(test_ds);
    if (test_limit > 0 && static_cast<int>(indices.size()) > test_limit) indices.resize(test_limit);
    const auto rows = run_ablation(cfg, train_ds, test_ds, indices, default_ablation_toggles());
    const auto csv = ablation_table_csv(rows);
    write_text(out_dir + "/ablation.csv", csv);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot structure-informed part segmentation"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", image_path, stage = "classification";
    std::vector<std::string> ckpt_paths;
    std::uint64_t seed_override = 0;
    bool seed_given = false, dump_prompts = false, debug_masks = false, hollow = false;
    int count = 20, size = 160, trials = 20, train_pool = 10, test_pool = 100, test_limit = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "job config JSON");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed_override, "override config seed")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", out_dir, "dataset directory")->required();
    synth->add_option("--count", count, "number of scenes");
    synth->add_option("--size", size, "canvas side length");
    synth->add_option("--seed", seed_override, "generator seed")->each([&](const std::string&) {
        seed_given = true;
    });
    synth->add_flag("--hollow", hollow, "platform drawn as a frame with a hole");

    auto* train = app.add_subcommand("train", "few-shot training");
    add_common(train);

    auto* infer = app.add_subcommand("infer", "single-image inference");
    add_common(infer);
    infer->add_option("--checkpoint", ckpt_paths, "checkpoint file")->required();
    infer->add_option("--image", image_path, "input image PNG")->required();
    infer->add_flag("--dump-prompts", dump_prompts, "write prompts.json");
    infer->add_flag("--debug-masks", debug_masks, "write per-class masks");

    auto* eval = app.add_subcommand("eval", "evaluate checkpoints on the test set");
    add_common(eval);
    eval->add_option("--checkpoint", ckpt_paths, "checkpoint file(s), one fold each")->required();

    auto* tune = app.add_subcommand("tune", "random hyperparameter search");
    add_common(tune);
    tune->add_option("--stage", stage, "classification | segmentation");
    tune->add_option("--trials", trials, "number of sampled trials");
    tune->add_option("--train-pool", train_pool, "train pool size");
    tune->add_option("--test-pool", test_pool, "test pool size");

    auto* ablate = app.add_subcommand("ablate", "enhancement / prompt-type ablation");
    add_common(ablate);
    ablate->add_option("--test-limit", test_limit, "cap on evaluated test images");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(out_dir, count, size, seed_given ? seed_override : 0, hollow);

        JobConfig cfg = load_config_arg(config_path);
        if (seed_given) cfg.seed = seed_override;
        if (train->parsed()) return cmd_train(cfg, out_dir);
        if (infer->parsed()) return cmd_infer(cfg, ckpt_paths.at(0), image_path, out_dir, dump_prompts,
                                              debug_masks);
        if (eval->parsed()) return cmd_eval(cfg, ckpt_paths, out_dir);
        if (tune->parsed()) return cmd_tune(cfg, stage, trials, train_pool, test_pool, out_dir);
        if (ablate->parsed()) return cmd_ablate(cfg, out_dir, test_limit);
    } catch (const graphseg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
