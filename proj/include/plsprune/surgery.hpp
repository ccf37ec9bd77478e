#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "plsprune/criteria.hpp"
#include "plsprune/network.hpp"

namespace plsprune {

/// Filters chosen for removal in one pruning step. The victim count is
/// floor(ratio * total) unless the one-filter-per-layer guard had to
/// shrink it (requested records the unguarded target).
struct RemovalPlan {
    std::vector<FilterKey> victims;  // sorted by (layer, filter)
    double ratio = 0.0;
    std::size_t requested = 0;
    std::map<std::size_t, std::size_t> per_layer_counts;
};

/// Ranks all filters globally by ascending score, ties broken by
/// ascending (layer_index, filter_index), and takes the lowest
/// floor(ratio*n), skipping any filter whose removal would empty its
/// layer.
RemovalPlan select_filters(const std::vector<FilterScore>& scores,
                           double ratio);

/// Structurally removes the planned filters: victim kernels and biases
/// are deleted and the next weighted layer drops the corresponding
/// input channels (or flattened input columns). Returns a new,
/// shape-consistent network.
Network prune_network(const Network& net, const RemovalPlan& plan);

/// End-to-end shape and weight-size check; empty result means ok.
std::vector<std::string> validate_consistency(const Network& net);

nlohmann::json plan_to_json(const RemovalPlan& plan);
RemovalPlan plan_from_json(const nlohmann::json& j);

}  // namespace plsprune
