#include "plsprune/representation.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include <json.hpp>

#include "plsprune/error.hpp"

namespace plsprune {

const char* pooling_mode_name(PoolingMode mode) {
    switch (mode) {
        case PoolingMode::GlobalMax: return "gmax";
        case PoolingMode::GlobalAvg: return "gavg";
        case PoolingMode::MaxPool2x2: return "max2x2";
    }
    return "unknown";
}

namespace {

std::size_t features_per_filter(PoolingMode mode, Shape3 map_shape,
                                std::size_t layer_index) {
    if (mode == PoolingMode::MaxPool2x2) {
        if (map_shape.height < 2 || map_shape.width < 2) {
            throw RepresentationError(
                "max-pooling 2x2 representation needs spatial size >= 2;"
                " conv layer " +
                std::to_string(layer_index) + " produces " +
                std::to_string(map_shape.height) + "x" +
                std::to_string(map_shape.width) + " maps");
        }
        return (map_shape.height / 2) * (map_shape.width / 2);
    }
    return 1;
}

}  // namespace

FeatureMatrix build_feature_matrix(const Network& net, const Dataset& data,
                                   PoolingMode mode) {
    if (data.count == 0) {
        throw DataError("feature extraction needs a nonempty dataset");
    }

    // Lay out the index first so the total width is known up front.
    // Column order: ascending layer index, then filter index, then
    // row-major spatial order within pooled blocks.
    FeatureMapIndex index;
    {
        Shape3 cur = net.input_shape();
        for (std::size_t li = 0; li < net.layers().size(); ++li) {
            const LayerSpec& l = net.layers()[li];
            const Shape3 out = layer_output_shape(l, cur);
            if (l.kind == LayerKind::Conv2D) {
                const std::size_t width = features_per_filter(mode, out, li);
                for (std::size_t f = 0; f < l.out_channels; ++f) {
                    index.entries.push_back(FeatureRange{
                        FilterKey{li, f}, index.feature_count, width});
                    index.feature_count += width;
                }
            }
            cur = out;
        }
    }

    Matrix x(data.count, index.feature_count);
    const std::size_t batch_size = 64;
    for (std::size_t start = 0; start < data.count; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, data.count);
        auto [probs, acts] =
            forward_with_activations(net, batch_from(data, start, end));
        (void)probs;

        std::size_t col = 0;
        for (const ConvActivations& a : acts) {
            const std::size_t area = a.shape.height * a.shape.width;
            const std::size_t per_filter =
                features_per_filter(mode, a.shape, a.layer_index);
            for (std::size_t s = 0; s < end - start; ++s) {
                const double* maps = a.values.data() + s * a.shape.size();
                for (std::size_t f = 0; f < a.shape.channels; ++f) {
                    const double* map = maps + f * area;
                    double* row = &x(start + s, col + f * per_filter);
                    switch (mode) {
                        case PoolingMode::GlobalMax: {
                            double best = map[0];
                            for (std::size_t t = 1; t < area; ++t) {
                                best = std::max(best, map[t]);
                            }
                            row[0] = best;
                            break;
                        }
                        case PoolingMode::GlobalAvg: {
                            double acc = 0.0;
                            for (std::size_t t = 0; t < area; ++t) {
                                acc += map[t];
                            }
                            row[0] = acc / static_cast<double>(area);
                            break;
                        }
                        case PoolingMode::MaxPool2x2: {
                            const std::size_t ho = a.shape.height / 2;
                            const std::size_t wo = a.shape.width / 2;
                            for (std::size_t y = 0; y < ho; ++y) {
                                for (std::size_t xx = 0; xx < wo; ++xx) {
                                    const double* base =
                                        map + 2 * y * a.shape.width + 2 * xx;
                                    double best = base[0];
                                    best = std::max(best, base[1]);
                                    best =
                                        std::max(best, base[a.shape.width]);
                                    best = std::max(
                                        best, base[a.shape.width + 1]);
                                    row[y * wo + xx] = best;
                                }
                            }
                            break;
                        }
                    }
                }
            }
            col += a.shape.channels * per_filter;
        }
    }
    return FeatureMatrix{std::move(x), std::move(index)};
}

void write_feature_matrix(const FeatureMatrix& fm,
                          const std::filesystem::path& path) {
    nlohmann::json entries = nlohmann::json::array();
    for (const FeatureRange& e : fm.index.entries) {
        entries.push_back({{"layer_index", e.key.layer_index},
                           {"filter_index", e.key.filter_index},
                           {"col_start", e.col_start},
                           {"width", e.width}});
    }
    nlohmann::json j{
        {"format", "plsprune-features"},
        {"version", 1},
        {"rows", fm.x.rows()},
        {"cols", fm.x.cols()},
        {"index", std::move(entries)},
        {"data", fm.x.data()},
    };
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path.string());
    out << j.dump() << "\n";
}

}  // namespace plsprune
