#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "plsprune/criteria.hpp"
#include "plsprune/network.hpp"
#include "plsprune/representation.hpp"
#include "plsprune/surgery.hpp"

namespace plsprune {

enum class PruneMode { Iterative, SingleShot };

const char* prune_mode_name(PruneMode mode);

/// Knobs of one pruning run. Defaults follow the reference setup:
/// 10% pruning rate, 2 PLS components, global max-pooling
/// representation, 10% of training rows for the PLS fit.
struct PruneConfig {
    double ratio = 0.10;
    std::size_t iterations = 5;
    std::size_t components = 2;
    PoolingMode pooling = PoolingMode::GlobalMax;
    double pls_sample_fraction = 0.10;
    Criterion criterion = Criterion::PlsVip;
    TrainConfig fine_tune;
    std::uint64_t seed = 0;
    PruneMode mode = PruneMode::Iterative;
};

struct IterationRecord {
    std::size_t iteration = 0;  // 1-based
    double accuracy_before = 0.0;
    double accuracy_after_finetune = 0.0;
    std::size_t flops_total = 0;
    double flops_reduction_pct = 0.0;
    std::size_t params = 0;
    std::size_t removed_count = 0;
    double cumulative_removed_pct = 0.0;
    std::map<std::size_t, std::size_t> per_layer_removed;
    double seconds = 0.0;
};

struct PruningReport {
    PruneConfig config;
    double baseline_accuracy = 0.0;
    std::size_t baseline_flops = 0;
    std::size_t baseline_params = 0;
    std::size_t baseline_filters = 0;
    std::vector<IterationRecord> records;
    /// Original filter count per conv layer, for per-layer percentages.
    std::map<std::size_t, std::size_t> layer_filters;
    bool aborted = false;
    std::string abort_reason;
    double total_seconds = 0.0;
};

/// Scores filters under cfg.criterion. PLS+VIP fits NIPALS on the pooled
/// feature matrix of a seeded uniform subsample; APoZ counts zeros on
/// the same subsample; L1 reads weights only.
std::vector<FilterScore> score_filters(const Network& net,
                                       const Dataset& train,
                                       const PruneConfig& cfg,
                                       std::uint64_t iter_seed);

/// Optional callbacks fired once per iteration, after scoring/selection.
/// Used by the CLI to export score CSVs and feature dumps.
struct StageObserver {
    std::function<void(std::size_t iteration,
                       const std::vector<FilterScore>& scores,
                       const RemovalPlan& plan)>
        on_selection;
};

/// Full iterative method: per iteration extract features, fit PLS, score
/// with VIP, remove the lowest-ranked filters globally, fine-tune once,
/// and feed the pruned network into the next iteration. A stage error
/// aborts the loop and flags the partial report.
std::pair<Network, PruningReport> run_iterative(
    const Network& net, const Dataset& train, const Dataset& heldout,
    const PruneConfig& cfg, const StageObserver* observer = nullptr);

/// One extract-score-prune pass at the given ratio plus one fine-tune.
/// Equivalent to run_iterative with iterations=1 under the same seed.
std::pair<Network, PruningReport> run_single_shot(
    const Network& net, const Dataset& train, const Dataset& heldout,
    double ratio, const PruneConfig& cfg,
    const StageObserver* observer = nullptr);

struct CriterionResult {
    Criterion criterion = Criterion::PlsVip;
    double accuracy_before = 0.0;
    double accuracy_after_finetune = 0.0;
    double accuracy_drop = 0.0;  // before - after, positive means worse
    std::size_t removed_count = 0;
    std::size_t flops_total = 0;
    bool aborted = false;
};

/// One pruning iteration per criterion from identical starting weights
/// and seed (Table-style comparison of PLS+VIP vs L1-norm vs APoZ).
struct CriterionComparison {
    std::uint64_t checkpoint_hash = 0;
    std::vector<CriterionResult> rows;
};

CriterionComparison compare_criteria(const Network& net, const Dataset& train,
                                     const Dataset& heldout,
                                     const PruneConfig& cfg);

nlohmann::json config_to_json(const PruneConfig& cfg);
PruneConfig config_from_json(const nlohmann::json& j);

/// include_timing=false yields the canonical byte-comparable form.
nlohmann::json report_to_json(const PruningReport& report,
                              bool include_timing = true);
PruningReport report_from_json(const nlohmann::json& j);

void write_report_csv(std::ostream& out, const PruningReport& report);
void write_per_layer_csv(std::ostream& out, const PruningReport& report);
void write_comparison_csv(std::ostream& out, const CriterionComparison& cmp);

}  // namespace plsprune
