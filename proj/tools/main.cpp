// plsprune command-line tool: train a small CNN, prune it with PLS+VIP
// (or the L1/APoZ baselines), compare criteria, and summarize reports.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "plsprune/criteria.hpp"
#include "plsprune/data.hpp"
#include "plsprune/error.hpp"
#include "plsprune/format.hpp"
#include "plsprune/network.hpp"
#include "plsprune/pipeline.hpp"
#include "plsprune/pls.hpp"
#include "plsprune/representation.hpp"
#include "plsprune/rng.hpp"
#include "plsprune/surgery.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace plsprune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Defaults, overridden by the config file, overridden by flags.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "runs/out";

    // data
    std::string source = "synthetic";  // synthetic | idx | csv
    std::size_t samples = 6000;
    int classes = 3;
    std::size_t channels = 1;
    std::size_t height = 12;
    std::size_t width = 12;
    double train_fraction = 5000.0 / 6000.0;
    std::string images_path;
    std::string labels_path;
    std::string csv_path;
    std::string csv_range = "byte";  // byte | unit

    // architecture + base training
    std::vector<std::size_t> filters{8, 16, 16};
    TrainConfig train;

    // pruning
    std::string checkpoint;
    PruneConfig prune;

    RunConfig() {
        train.learning_rate = 0.05;
        train.momentum = 0.9;
        train.batch_size = 32;
        train.epochs = 4;
        prune.fine_tune = train;
        prune.fine_tune.epochs = 2;
    }
};

void apply_file(RunConfig& cfg, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("config parse error at byte " +
                         std::to_string(e.byte) + ": " + e.what());
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out = j.value("out", cfg.out);
    if (j.contains("data")) {
        const json& d = j["data"];
        cfg.source = d.value("source", cfg.source);
        cfg.samples = d.value("samples", cfg.samples);
        cfg.classes = d.value("classes", cfg.classes);
        cfg.channels = d.value("channels", cfg.channels);
        cfg.height = d.value("height", cfg.height);
        cfg.width = d.value("width", cfg.width);
        cfg.train_fraction = d.value("train_fraction", cfg.train_fraction);
        cfg.images_path = d.value("images", cfg.images_path);
        cfg.labels_path = d.value("labels", cfg.labels_path);
        cfg.csv_path = d.value("csv", cfg.csv_path);
        cfg.csv_range = d.value("csv_range", cfg.csv_range);
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        cfg.filters = m.value("filters", cfg.filters);
        cfg.checkpoint = m.value("checkpoint", cfg.checkpoint);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        cfg.train.learning_rate =
            t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.momentum = t.value("momentum", cfg.train.momentum);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    }
    if (j.contains("prune")) {
        json p = config_to_json(cfg.prune);
        p.merge_patch(j["prune"]);
        cfg.prune = config_from_json(p);
    }
}

Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.source == "synthetic") {
        return synthetic(cfg.samples, cfg.classes,
                         Shape3{cfg.channels, cfg.height, cfg.width},
                         derive_seed(cfg.seed, 1000));
    }
    if (cfg.source == "idx") {
        if (cfg.images_path.empty() || cfg.labels_path.empty()) {
            throw ParamError("IDX data source needs --images and --labels");
        }
        return load_idx(cfg.images_path, cfg.labels_path);
    }
    if (cfg.source == "csv") {
        if (cfg.csv_path.empty()) {
            throw ParamError("CSV data source needs --csv");
        }
        const PixelRange range =
            cfg.csv_range == "unit" ? PixelRange::Unit : PixelRange::Byte;
        return load_csv(cfg.csv_path,
                        Shape3{cfg.channels, cfg.height, cfg.width}, range);
    }
    throw ParamError("unknown data source: " + cfg.source +
                     " (expected synthetic|idx|csv)");
}

Split load_splits(const RunConfig& cfg) {
    const Dataset all = load_dataset(cfg);
    return split(all, cfg.train_fraction, derive_seed(cfg.seed, 1001));
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path.string());
    out << text;
}

int cmd_train(const RunConfig& cfg) {
    const Split s = load_splits(cfg);
    Network net =
        build_conv_classifier(Shape3{cfg.channels, cfg.height, cfg.width},
                              s.train.class_count, cfg.filters,
                              derive_seed(cfg.seed, 1002));

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 1003);
    const TrainLog log = train_sgd(net, s.train, tc);
    const double heldout_acc = evaluate(net, s.heldout);

    fs::create_directories(cfg.out);
    const fs::path model_path = fs::path(cfg.out) / "model.json";
    save_network(net, model_path);
    json jlog{{"losses", log.losses},
              {"train_accuracies", log.accuracies},
              {"heldout_accuracy", heldout_acc},
              {"seed", cfg.seed}};
    write_text(fs::path(cfg.out) / "train_log.json", jlog.dump(2) + "\n");

    std::cout << "model: " << model_path.string() << "\n";
    std::cout << "held-out accuracy: " << format_double(heldout_acc) << "\n";
    return kExitOk;
}

int cmd_prune(const RunConfig& cfg, bool dump_features) {
    if (cfg.checkpoint.empty()) {
        std::cerr << "usage error: prune needs --model <checkpoint>\n";
        return kExitUsage;
    }
    const Network net = load_network(cfg.checkpoint);
    const Split s = load_splits(cfg);

    PruneConfig pc = cfg.prune;
    pc.seed = derive_seed(cfg.seed, 1004);

    fs::create_directories(cfg.out);
    StageObserver observer;
    observer.on_selection = [&](std::size_t it,
                                const std::vector<FilterScore>& scores,
                                const RemovalPlan& plan) {
        std::ostringstream csv;
        write_scores_csv(csv, scores);
        write_text(fs::path(cfg.out) /
                       ("scores_it" + std::to_string(it) + ".csv"),
                   csv.str());
        write_text(fs::path(cfg.out) /
                       ("plan_it" + std::to_string(it) + ".json"),
                   plan_to_json(plan).dump(2) + "\n");
    };

    // The per-iteration loop consumes pruned networks, so the exported
    // feature matrix is the one the first iteration actually fit.
    if (dump_features) {
        const Dataset sub =
            subsample(s.train, pc.pls_sample_fraction,
                      derive_seed(derive_seed(pc.seed, 1), 0));
        const FeatureMatrix fm = build_feature_matrix(net, sub, pc.pooling);
        write_feature_matrix(fm, fs::path(cfg.out) / "features_it1.json");
    }

    auto [pruned, report] =
        pc.mode == PruneMode::SingleShot
            ? run_single_shot(net, s.train, s.heldout, pc.ratio, pc,
                              &observer)
            : run_iterative(net, s.train, s.heldout, pc, &observer);

    save_network(pruned, fs::path(cfg.out) / "pruned_model.json");
    // Canonical (timing-free) JSON keeps identical invocations
    // byte-identical; timing goes to stdout instead.
    write_text(fs::path(cfg.out) / "report.json",
               report_to_json(report, false).dump(2) + "\n");
    std::ostringstream csv;
    write_report_csv(csv, report);
    write_text(fs::path(cfg.out) / "report.csv", csv.str());
    std::ostringstream per_layer;
    write_per_layer_csv(per_layer, report);
    write_text(fs::path(cfg.out) / "per_layer.csv", per_layer.str());

    // Per-layer FLOPs before/after, for cost-profile plots.
    {
        const FlopsBreakdown before = flops_count(net);
        const FlopsBreakdown after = flops_count(pruned);
        std::ostringstream lf;
        lf << "layer_index,kind,flops_before,flops_after\n";
        for (std::size_t i = 0; i < before.per_layer.size(); ++i) {
            lf << before.per_layer[i].first << ","
               << layer_kind_name(net.layers()[i].kind) << ","
               << before.per_layer[i].second << ","
               << after.per_layer[i].second << "\n";
        }
        write_text(fs::path(cfg.out) / "layer_flops.csv", lf.str());
    }

    std::cout << "baseline accuracy "
              << format_double(report.baseline_accuracy) << ", flops "
              << report.baseline_flops << "\n";
    for (const auto& r : report.records) {
        std::cout << "iteration " << r.iteration << ": accuracy "
                  << format_double(r.accuracy_after_finetune)
                  << ", flops reduction "
                  << format_double(r.flops_reduction_pct) << "%, removed "
                  << r.removed_count << " filters\n";
    }
    std::cout << "wall time " << format_double(report.total_seconds) << "s\n";
    if (report.aborted) {
        std::cerr << "aborted: " << report.abort_reason << "\n";
        std::cerr << "partial report written to " << cfg.out << "\n";
        return kExitFailure;
    }
    return kExitOk;
}

int cmd_compare(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) {
        std::cerr << "usage error: compare needs --model <checkpoint>\n";
        return kExitUsage;
    }
    const Network net = load_network(cfg.checkpoint);
    const Split s = load_splits(cfg);

    PruneConfig pc = cfg.prune;
    pc.seed = derive_seed(cfg.seed, 1004);
    const CriterionComparison cmp =
        compare_criteria(net, s.train, s.heldout, pc);

    std::cout << "criterion  removed  acc_before  acc_after  drop(pp)\n";
    bool any_aborted = false;
    for (const auto& row : cmp.rows) {
        any_aborted = any_aborted || row.aborted;
        std::printf("%-9s  %7zu  %10.4f  %9.4f  %8.2f\n",
                    criterion_name(row.criterion), row.removed_count,
                    row.accuracy_before, row.accuracy_after_finetune,
                    row.accuracy_drop);
    }
    std::cout << "checkpoint hash " << cmp.checkpoint_hash << "\n";

    fs::create_directories(cfg.out);
    std::ostringstream csv;
    write_comparison_csv(csv, cmp);
    write_text(fs::path(cfg.out) / "criteria.csv", csv.str());
    return any_aborted ? kExitFailure : kExitOk;
}

int cmd_report(const std::string& report_path, const std::string& out_dir) {
    std::ifstream in(report_path);
    if (!in) {
        std::cerr << "usage error: cannot open report " << report_path
                  << "\n";
        return kExitUsage;
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("report parse error at byte " +
                         std::to_string(e.byte) + ": " + e.what());
    }
    const PruningReport report = report_from_json(j);

    std::cout << "mode " << prune_mode_name(report.config.mode)
              << ", criterion " << criterion_name(report.config.criterion)
              << ", ratio " << format_double(report.config.ratio) << "\n";
    std::cout << "baseline: accuracy "
              << format_double(report.baseline_accuracy) << ", flops "
              << report.baseline_flops << ", params "
              << report.baseline_params << "\n";
    std::cout << "iteration  accuracy  flops_red%  removed  cumulative%\n";
    bool flops_consistent = true;
    for (const auto& r : report.records) {
        std::printf("%9zu  %8.4f  %10.2f  %7zu  %11.2f\n", r.iteration,
                    r.accuracy_after_finetune, r.flops_reduction_pct,
                    r.removed_count, r.cumulative_removed_pct);
        const double derived =
            100.0 * (1.0 - static_cast<double>(r.flops_total) /
                               static_cast<double>(report.baseline_flops));
        if (std::abs(derived - r.flops_reduction_pct) > 1e-9) {
            flops_consistent = false;
        }
    }
    if (!flops_consistent) {
        std::cout << "warning: flops_reduction_pct does not match"
                     " flops_total/baseline\n";
    }
    if (report.aborted) {
        std::cout << "aborted: " << report.abort_reason << "\n";
    }

    std::cout << "per-layer removal:\n";
    std::map<std::size_t, std::size_t> removed;
    for (const auto& r : report.records) {
        for (const auto& [li, n] : r.per_layer_removed) removed[li] += n;
    }
    for (const auto& [li, original] : report.layer_filters) {
        const std::size_t gone = removed.count(li) ? removed[li] : 0;
        std::printf("  layer %zu: %zu of %zu removed (%.1f%%)\n", li, gone,
                    original,
                    100.0 * static_cast<double>(gone) /
                        static_cast<double>(original));
    }

    const fs::path out = out_dir.empty()
                             ? fs::path(report_path).parent_path()
                             : fs::path(out_dir);
    fs::create_directories(out);
    std::ostringstream csv;
    write_report_csv(csv, report);
    write_text(out / "report.csv", csv.str());
    std::ostringstream per_layer;
    write_per_layer_csv(per_layer, report);
    write_text(out / "per_layer.csv", per_layer.str());
    std::cout << "wrote " << (out / "report.csv").string() << " and "
              << (out / "per_layer.csv").string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PLS+VIP structured filter pruning for small CNNs"};
    app.require_subcommand(1);

    std::string config_path;

    // Flag storage; only flags the user actually passed override the file.
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out, source, images, labels, csv, csv_range,
        checkpoint, pooling, criterion, mode;
    std::optional<std::size_t> samples, height, width, channels, epochs,
        batch_size, iterations, components, ft_epochs;
    std::optional<int> classes;
    std::optional<double> train_fraction, lr, momentum, ratio, sample_frac,
        ft_lr;
    std::optional<std::vector<std::size_t>> filters;
    bool dump_features = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "master seed for all randomness");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--data", source, "data source: synthetic|idx|csv");
        sub->add_option("--samples", samples, "synthetic sample count");
        sub->add_option("--classes", classes, "synthetic class count");
        sub->add_option("--height", height, "image height");
        sub->add_option("--width", width, "image width");
        sub->add_option("--channels", channels, "image channels");
        sub->add_option("--train-fraction", train_fraction,
                        "train/held-out split fraction");
        sub->add_option("--images", images, "IDX image file");
        sub->add_option("--labels", labels, "IDX label file");
        sub->add_option("--csv", csv, "CSV data file");
        sub->add_option("--csv-range", csv_range,
                        "CSV pixel range: byte|unit");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a checkpoint");
    add_common(train_cmd);
    train_cmd->add_option("--filters", filters,
                          "conv filter counts, e.g. --filters 8 16 16");
    train_cmd->add_option("--epochs", epochs, "training epochs");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--momentum", momentum, "SGD momentum");
    train_cmd->add_option("--batch", batch_size, "mini-batch size");

    CLI::App* prune_cmd =
        app.add_subcommand("prune", "prune a trained checkpoint");
    add_common(prune_cmd);
    prune_cmd->add_option("--model", checkpoint, "checkpoint to prune");
    prune_cmd->add_option("--ratio", ratio, "pruning ratio per iteration");
    prune_cmd->add_option("--iterations", iterations, "pruning iterations");
    prune_cmd->add_option("--components", components, "PLS components");
    prune_cmd->add_option("--pooling", pooling,
                          "filter representation: gmax|gavg|max2x2");
    prune_cmd->add_option("--criterion", criterion,
                          "importance criterion: pls|l1|apoz");
    prune_cmd->add_option("--pls-sample-fraction", sample_frac,
                          "fraction of training rows for the PLS fit");
    prune_cmd->add_option("--mode", mode, "iterative|single");
    prune_cmd->add_option("--ft-epochs", ft_epochs, "fine-tune epochs");
    prune_cmd->add_option("--ft-lr", ft_lr, "fine-tune learning rate");
    prune_cmd->add_flag("--dump-features", dump_features,
                        "dump the feature matrix of iteration 1");

    CLI::App* compare_cmd = app.add_subcommand(
        "compare", "one pruning iteration per criterion, same checkpoint");
    add_common(compare_cmd);
    compare_cmd->add_option("--model", checkpoint, "checkpoint to prune");
    compare_cmd->add_option("--ratio", ratio, "pruning ratio");
    compare_cmd->add_option("--components", components, "PLS components");
    compare_cmd->add_option("--pooling", pooling, "gmax|gavg|max2x2");
    compare_cmd->add_option("--pls-sample-fraction", sample_frac,
                            "fraction of training rows for the PLS fit");
    compare_cmd->add_option("--ft-epochs", ft_epochs, "fine-tune epochs");

    CLI::App* report_cmd =
        app.add_subcommand("report", "summarize a pruning report");
    std::string report_path;
    report_cmd->add_option("report", report_path, "report.json path");
    report_cmd->add_option("--out", out, "output directory for CSVs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) apply_file(cfg, config_path);

        if (seed) cfg.seed = *seed;
        if (out) cfg.out = *out;
        if (source) cfg.source = *source;
        if (samples) cfg.samples = *samples;
        if (classes) cfg.classes = *classes;
        if (height) cfg.height = *height;
        if (width) cfg.width = *width;
        if (channels) cfg.channels = *channels;
        if (train_fraction) cfg.train_fraction = *train_fraction;
        if (images) cfg.images_path = *images;
        if (labels) cfg.labels_path = *labels;
        if (csv) cfg.csv_path = *csv;
        if (csv_range) cfg.csv_range = *csv_range;
        if (filters) cfg.filters = *filters;
        if (epochs) cfg.train.epochs = *epochs;
        if (lr) cfg.train.learning_rate = *lr;
        if (momentum) cfg.train.momentum = *momentum;
        if (batch_size) cfg.train.batch_size = *batch_size;
        if (checkpoint) cfg.checkpoint = *checkpoint;
        if (ratio) cfg.prune.ratio = *ratio;
        if (iterations) cfg.prune.iterations = *iterations;
        if (components) cfg.prune.components = *components;
        if (sample_frac) cfg.prune.pls_sample_fraction = *sample_frac;
        if (ft_epochs) cfg.prune.fine_tune.epochs = *ft_epochs;
        if (ft_lr) cfg.prune.fine_tune.learning_rate = *ft_lr;
        if (pooling) {
            json p = config_to_json(cfg.prune);
            p["pooling"] = *pooling;
            cfg.prune = config_from_json(p);
        }
        if (criterion) {
            json p = config_to_json(cfg.prune);
            p["criterion"] = *criterion;
            cfg.prune = config_from_json(p);
        }
        if (mode) {
            json p = config_to_json(cfg.prune);
            p["mode"] = *mode;
            cfg.prune = config_from_json(p);
        }

        if (train_cmd->parsed()) return cmd_train(cfg);
        if (prune_cmd->parsed()) return cmd_prune(cfg, dump_features);
        if (compare_cmd->parsed()) return cmd_compare(cfg);
        if (report_cmd->parsed()) {
            if (report_path.empty()) {
                std::cerr << "usage error: report needs a report.json path\n";
                return kExitUsage;
            }
            return cmd_report(report_path, out.value_or(""));
        }
    } catch (const ParamError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
