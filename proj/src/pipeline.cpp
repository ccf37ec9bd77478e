#include "plsprune/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>

#include "plsprune/error.hpp"
#include "plsprune/format.hpp"
#include "plsprune/pls.hpp"
#include "plsprune/rng.hpp"

namespace plsprune {

const char* prune_mode_name(PruneMode mode) {
    return mode == PruneMode::Iterative ? "iterative" : "single";
}

std::vector<FilterScore> score_filters(const Network& net,
                                       const Dataset& train,
                                       const PruneConfig& cfg,
                                       std::uint64_t iter_seed) {
    switch (cfg.criterion) {
        case Criterion::L1Norm:
            return l1_norm_scores(net);
        case Criterion::APoZ: {
            const Dataset sub = subsample(train, cfg.pls_sample_fraction,
                                          derive_seed(iter_seed, 0));
            return apoz_scores(net, sub);
        }
        case Criterion::PlsVip:
            break;
    }
    const Dataset sub = subsample(train, cfg.pls_sample_fraction,
                                  derive_seed(iter_seed, 0));
    const FeatureMatrix fm = build_feature_matrix(net, sub, cfg.pooling);
    const Matrix y = one_hot_labels(sub.labels, sub.class_count);
    // The component cap shrinks along with the network so deep pruning
    // runs keep fitting.
    const std::size_t c = std::min(
        {cfg.components, fm.x.rows() - 1, fm.x.cols()});
    const PlsModel model = nipals_fit(fm.x, y, std::max<std::size_t>(c, 1));
    return pls_vip_scores(vip(model), fm.index);
}

namespace {

struct IterationOutcome {
    RemovalPlan plan;
};

IterationOutcome prune_once(Network& net, const Dataset& train,
                            const PruneConfig& cfg, std::uint64_t iter_seed,
                            std::size_t iteration,
                            const StageObserver* observer) {
    const std::vector<FilterScore> scores =
        score_filters(net, train, cfg, iter_seed);
    RemovalPlan plan = select_filters(scores, cfg.ratio);
    if (observer && observer->on_selection) {
        observer->on_selection(iteration, scores, plan);
    }
    Network pruned = prune_network(net, plan);
    const auto diags = validate_consistency(pruned);
    if (!diags.empty()) {
        throw SurgeryError("post-surgery network inconsistent: " + diags[0]);
    }
    net = std::move(pruned);

    TrainConfig ft = cfg.fine_tune;
    ft.seed = derive_seed(iter_seed, 1);
    train_sgd(net, train, ft);
    return IterationOutcome{std::move(plan)};
}

std::pair<Network, PruningReport> run_loop(const Network& start,
                                           const Dataset& train,
                                           const Dataset& heldout,
                                           const PruneConfig& cfg,
                                           const StageObserver* observer) {
    const auto t0 = std::chrono::steady_clock::now();
    PruningReport report;
    report.config = cfg;
    report.baseline_accuracy = evaluate(start, heldout);
    report.baseline_flops = flops_count(start).total;
    report.baseline_params = parameter_count(start);
    report.baseline_filters = conv_filter_count(start);
    for (std::size_t li : conv_layer_indices(start)) {
        report.layer_filters[li] = start.layers()[li].out_channels;
    }

    Network net = start;
    std::size_t removed_total = 0;
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        const auto it0 = std::chrono::steady_clock::now();
        IterationRecord rec;
        rec.iteration = it;
        rec.accuracy_before = evaluate(net, heldout);
        try {
            const std::uint64_t iter_seed = derive_seed(cfg.seed, it);
            IterationOutcome outcome =
                prune_once(net, train, cfg, iter_seed, it, observer);
            rec.removed_count = outcome.plan.victims.size();
            rec.per_layer_removed = outcome.plan.per_layer_counts;
        } catch (const std::exception& e) {
            report.aborted = true;
            report.abort_reason = "iteration " + std::to_string(it) + ": " +
                                  e.what();
            break;
        }
        removed_total += rec.removed_count;
        rec.accuracy_after_finetune = evaluate(net, heldout);
        rec.flops_total = flops_count(net).total;
        rec.flops_reduction_pct =
            100.0 * (1.0 - static_cast<double>(rec.flops_total) /
                               static_cast<double>(report.baseline_flops));
        rec.params = parameter_count(net);
        rec.cumulative_removed_pct =
            100.0 * static_cast<double>(removed_total) /
            static_cast<double>(report.baseline_filters);
        rec.seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - it0)
                          .count();
        report.records.push_back(std::move(rec));
    }
    report.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return {std::move(net), std::move(report)};
}

}  // namespace

std::pair<Network, PruningReport> run_iterative(const Network& net,
                                                const Dataset& train,
                                                const Dataset& heldout,
                                                const PruneConfig& cfg,
                                                const StageObserver* observer) {
    PruneConfig c = cfg;
    c.mode = PruneMode::Iterative;
    return run_loop(net, train, heldout, c, observer);
}

std::pair<Network, PruningReport> run_single_shot(
    const Network& net, const Dataset& train, const Dataset& heldout,
    double ratio, const PruneConfig& cfg, const StageObserver* observer) {
    PruneConfig c = cfg;
    c.mode = PruneMode::SingleShot;
    c.ratio = ratio;
    c.iterations = 1;
    return run_loop(net, train, heldout, c, observer);
}

CriterionComparison compare_criteria(const Network& net, const Dataset& train,
                                     const Dataset& heldout,
                                     const PruneConfig& cfg) {
    CriterionComparison cmp;
    cmp.checkpoint_hash = network_hash(net);
    for (Criterion crit :
         {Criterion::PlsVip, Criterion::L1Norm, Criterion::APoZ}) {
        PruneConfig c = cfg;
        c.criterion = crit;
        c.iterations = 1;
        auto [pruned, report] = run_loop(net, train, heldout, c, nullptr);
        CriterionResult row;
        row.criterion = crit;
        row.aborted = report.aborted;
        if (!report.records.empty()) {
            const IterationRecord& rec = report.records.front();
            row.accuracy_before = rec.accuracy_before;
            row.accuracy_after_finetune = rec.accuracy_after_finetune;
            row.accuracy_drop =
                100.0 * (rec.accuracy_before - rec.accuracy_after_finetune);
            row.removed_count = rec.removed_count;
            row.flops_total = rec.flops_total;
        }
        cmp.rows.push_back(row);
    }
    return cmp;
}

nlohmann::json config_to_json(const PruneConfig& cfg) {
    return nlohmann::json{
        {"ratio", cfg.ratio},
        {"iterations", cfg.iterations},
        {"components", cfg.components},
        {"pooling", pooling_mode_name(cfg.pooling)},
        {"pls_sample_fraction", cfg.pls_sample_fraction},
        {"criterion", criterion_name(cfg.criterion)},
        {"mode", prune_mode_name(cfg.mode)},
        {"seed", cfg.seed},
        {"fine_tune",
         {{"learning_rate", cfg.fine_tune.learning_rate},
          {"momentum", cfg.fine_tune.momentum},
          {"batch_size", cfg.fine_tune.batch_size},
          {"epochs", cfg.fine_tune.epochs}}},
    };
}

PruneConfig config_from_json(const nlohmann::json& j) {
    PruneConfig cfg;
    cfg.ratio = j.at("ratio").get<double>();
    cfg.iterations = j.at("iterations").get<std::size_t>();
    cfg.components = j.at("components").get<std::size_t>();
    const std::string pooling = j.at("pooling").get<std::string>();
    if (pooling == "gmax") {
        cfg.pooling = PoolingMode::GlobalMax;
    } else if (pooling == "gavg") {
        cfg.pooling = PoolingMode::GlobalAvg;
    } else if (pooling == "max2x2") {
        cfg.pooling = PoolingMode::MaxPool2x2;
    } else {
        throw ParseError("unknown pooling mode: " + pooling);
    }
    cfg.pls_sample_fraction = j.at("pls_sample_fraction").get<double>();
    const std::string crit = j.at("criterion").get<std::string>();
    if (crit == "pls") {
        cfg.criterion = Criterion::PlsVip;
    } else if (crit == "l1") {
        cfg.criterion = Criterion::L1Norm;
    } else if (crit == "apoz") {
        cfg.criterion = Criterion::APoZ;
    } else {
        throw ParseError("unknown criterion: " + crit);
    }
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "iterative") {
        cfg.mode = PruneMode::Iterative;
    } else if (mode == "single") {
        cfg.mode = PruneMode::SingleShot;
    } else {
        throw ParseError("unknown mode: " + mode);
    }
    cfg.seed = j.at("seed").get<std::uint64_t>();
    const auto& ft = j.at("fine_tune");
    cfg.fine_tune.learning_rate = ft.at("learning_rate").get<double>();
    cfg.fine_tune.momentum = ft.at("momentum").get<double>();
    cfg.fine_tune.batch_size = ft.at("batch_size").get<std::size_t>();
    cfg.fine_tune.epochs = ft.at("epochs").get<std::size_t>();
    return cfg;
}

namespace {

nlohmann::json counts_to_json(const std::map<std::size_t, std::size_t>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

std::map<std::size_t, std::size_t> counts_from_json(const nlohmann::json& j) {
    std::map<std::size_t, std::size_t> m;
    for (const auto& [k, v] : j.items()) {
        m[std::stoul(k)] = v.get<std::size_t>();
    }
    return m;
}

}  // namespace

nlohmann::json report_to_json(const PruningReport& report,
                              bool include_timing) {
    nlohmann::json records = nlohmann::json::array();
    for (const IterationRecord& r : report.records) {
        nlohmann::json rec{
            {"iteration", r.iteration},
            {"accuracy_before", r.accuracy_before},
            {"accuracy_after_finetune", r.accuracy_after_finetune},
            {"flops_total", r.flops_total},
            {"flops_reduction_pct", r.flops_reduction_pct},
            {"params", r.params},
            {"removed_count", r.removed_count},
            {"cumulative_removed_pct", r.cumulative_removed_pct},
            {"per_layer_removed", counts_to_json(r.per_layer_removed)},
        };
        if (include_timing) rec["seconds"] = r.seconds;
        records.push_back(std::move(rec));
    }
    nlohmann::json j{
        {"format", "plsprune-report"},
        {"version", 1},
        {"config", config_to_json(report.config)},
        {"baseline",
         {{"accuracy", report.baseline_accuracy},
          {"flops", report.baseline_flops},
          {"params", report.baseline_params},
          {"filters", report.baseline_filters}}},
        {"layer_filters", counts_to_json(report.layer_filters)},
        {"iterations", std::move(records)},
        {"aborted", report.aborted},
        {"abort_reason", report.abort_reason},
    };
    if (include_timing) j["total_seconds"] = report.total_seconds;
    return j;
}

PruningReport report_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "plsprune-report") {
        throw ParseError("not a pruning report");
    }
    if (j.value("version", -1) != 1) {
        throw IntegrityError("unsupported report version");
    }
    PruningReport report;
    report.config = config_from_json(j.at("config"));
    const auto& b = j.at("baseline");
    report.baseline_accuracy = b.at("accuracy").get<double>();
    report.baseline_flops = b.at("flops").get<std::size_t>();
    report.baseline_params = b.at("params").get<std::size_t>();
    report.baseline_filters = b.at("filters").get<std::size_t>();
    report.layer_filters = counts_from_json(j.at("layer_filters"));
    for (const auto& rj : j.at("iterations")) {
        IterationRecord r;
        r.iteration = rj.at("iteration").get<std::size_t>();
        r.accuracy_before = rj.at("accuracy_before").get<double>();
        r.accuracy_after_finetune =
            rj.at("accuracy_after_finetune").get<double>();
        r.flops_total = rj.at("flops_total").get<std::size_t>();
        r.flops_reduction_pct = rj.at("flops_reduction_pct").get<double>();
        r.params = rj.at("params").get<std::size_t>();
        r.removed_count = rj.at("removed_count").get<std::size_t>();
        r.cumulative_removed_pct =
            rj.at("cumulative_removed_pct").get<double>();
        r.per_layer_removed = counts_from_json(rj.at("per_layer_removed"));
        r.seconds = rj.value("seconds", 0.0);
        report.records.push_back(std::move(r));
    }
    report.aborted = j.at("aborted").get<bool>();
    report.abort_reason = j.at("abort_reason").get<std::string>();
    report.total_seconds = j.value("total_seconds", 0.0);
    return report;
}

void write_report_csv(std::ostream& out, const PruningReport& report) {
    out << "iteration,accuracy_before,accuracy_after_finetune,flops_total,"
           "flops_reduction_pct,params,removed_count,"
           "cumulative_removed_pct\n";
    for (const IterationRecord& r : report.records) {
        out << r.iteration << "," << format_double(r.accuracy_before) << ","
            << format_double(r.accuracy_after_finetune) << ","
            << r.flops_total << "," << format_double(r.flops_reduction_pct)
            << "," << r.params << "," << r.removed_count << ","
            << format_double(r.cumulative_removed_pct) << "\n";
    }
}

void write_per_layer_csv(std::ostream& out, const PruningReport& report) {
    std::map<std::size_t, std::size_t> removed;
    for (const IterationRecord& r : report.records) {
        for (const auto& [layer, count] : r.per_layer_removed) {
            removed[layer] += count;
        }
    }
    out << "layer_index,original_filters,removed_filters,removed_pct\n";
    for (const auto& [layer, original] : report.layer_filters) {
        const std::size_t gone = removed.count(layer) ? removed[layer] : 0;
        const double pct =
            100.0 * static_cast<double>(gone) / static_cast<double>(original);
        out << layer << "," << original << "," << gone << ","
            << format_double(pct) << "\n";
    }
}

void write_comparison_csv(std::ostream& out, const CriterionComparison& cmp) {
    out << "criterion,accuracy_before,accuracy_after_finetune,"
           "accuracy_drop_pp,removed_count,flops_total,checkpoint_hash\n";
    for (const CriterionResult& r : cmp.rows) {
        out << criterion_name(r.criterion) << ","
            << format_double(r.accuracy_before) << ","
            << format_double(r.accuracy_after_finetune) << ","
            << format_double(r.accuracy_drop) << "," << r.removed_count << ","
            << r.flops_total << "," << cmp.checkpoint_hash << "\n";
    }
}

}  // namespace plsprune
