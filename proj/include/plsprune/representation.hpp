#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "plsprune/matrix.hpp"
#include "plsprune/network.hpp"

namespace plsprune {

/// Pooling applied to each filter's feature map before it becomes
/// feature column(s): global modes yield one feature per filter,
/// MaxPool2x2 a pooled grid of features.
enum class PoolingMode { GlobalMax, GlobalAvg, MaxPool2x2 };

const char* pooling_mode_name(PoolingMode mode);

/// Identifies one convolutional filter.
struct FilterKey {
    std::size_t layer_index = 0;
    std::size_t filter_index = 0;
    auto operator<=>(const FilterKey&) const = default;
};

/// Maps one filter to its contiguous column range in the feature matrix.
struct FeatureRange {
    FilterKey key;
    std::size_t col_start = 0;
    std::size_t width = 0;
};

/// Column ranges partition [0, feature_count) with no gaps or overlaps,
/// ordered by ascending (layer_index, filter_index).
struct FeatureMapIndex {
    std::vector<FeatureRange> entries;
    std::size_t feature_count = 0;
};

struct FeatureMatrix {
    Matrix x;  // one row per dataset sample, in dataset order
    FeatureMapIndex index;
};

/// Represents every convolutional filter of the network over the dataset:
/// row s concatenates, layer by layer and filter by filter, the pooled
/// post-activation feature maps of sample s.
FeatureMatrix build_feature_matrix(const Network& net, const Dataset& data,
                                   PoolingMode mode);

/// Dumps (X, index) as a structured JSON artifact for offline inspection.
void write_feature_matrix(const FeatureMatrix& fm,
                          const std::filesystem::path& path);

}  // namespace plsprune
