#include "plsprune/criteria.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "plsprune/error.hpp"
#include "plsprune/format.hpp"

namespace plsprune {

const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::PlsVip: return "pls";
        case Criterion::L1Norm: return "l1";
        case Criterion::APoZ: return "apoz";
    }
    return "unknown";
}

std::vector<FilterScore> pls_vip_scores(const VipScores& vip,
                                        const FeatureMapIndex& index) {
    if (vip.values.size() != index.feature_count) {
        throw ParamError("VIP score count " +
                         std::to_string(vip.values.size()) +
                         " does not match feature count " +
                         std::to_string(index.feature_count));
    }
    std::vector<FilterScore> out;
    out.reserve(index.entries.size());
    for (const FeatureRange& e : index.entries) {
        double acc = 0.0;
        for (std::size_t j = 0; j < e.width; ++j) {
            acc += vip.values[e.col_start + j];
        }
        out.push_back(FilterScore{e.key, acc / static_cast<double>(e.width),
                                  Criterion::PlsVip});
    }
    return out;
}

std::vector<FilterScore> l1_norm_scores(const Network& net) {
    std::vector<FilterScore> out;
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
        const LayerSpec& l = net.layers()[li];
        if (l.kind != LayerKind::Conv2D) continue;
        const std::size_t per_filter = l.in_channels * l.kernel * l.kernel;
        for (std::size_t f = 0; f < l.out_channels; ++f) {
            const double* w = l.weights.data() + f * per_filter;
            double norm = 0.0;
            for (std::size_t t = 0; t < per_filter; ++t) {
                norm += std::abs(w[t]);
            }
            out.push_back(
                FilterScore{FilterKey{li, f}, norm, Criterion::L1Norm});
        }
    }
    if (out.empty()) throw CriterionError("network has no conv layers");
    return out;
}

std::vector<FilterScore> apoz_scores(const Network& net,
                                     const Dataset& data) {
    if (data.count == 0) throw DataError("APoZ needs a nonempty dataset");
    const auto& layers = net.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (layers[li].kind == LayerKind::Conv2D &&
            (li + 1 >= layers.size() ||
             layers[li + 1].kind != LayerKind::ReLU)) {
            throw CriterionError("APoZ needs ReLU after every conv layer;"
                                 " layer " +
                                 std::to_string(li) + " has none");
        }
    }

    // zero_counts[filter position] over all samples and spatial locations
    std::vector<std::size_t> zeros;
    std::vector<std::size_t> totals;
    std::vector<FilterKey> keys;
    bool layout_done = false;

    const std::size_t batch_size = 64;
    for (std::size_t start = 0; start < data.count; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, data.count);
        auto [probs, acts] =
            forward_with_activations(net, batch_from(data, start, end));
        (void)probs;
        if (!layout_done) {
            for (const ConvActivations& a : acts) {
                for (std::size_t f = 0; f < a.shape.channels; ++f) {
                    keys.push_back(FilterKey{a.layer_index, f});
                }
            }
            zeros.assign(keys.size(), 0);
            totals.assign(keys.size(), 0);
            layout_done = true;
        }
        std::size_t pos = 0;
        for (const ConvActivations& a : acts) {
            const std::size_t area = a.shape.height * a.shape.width;
            for (std::size_t s = 0; s < end - start; ++s) {
                const double* maps = a.values.data() + s * a.shape.size();
                for (std::size_t f = 0; f < a.shape.channels; ++f) {
                    const double* map = maps + f * area;
                    std::size_t z = 0;
                    for (std::size_t t = 0; t < area; ++t) {
                        if (map[t] == 0.0) ++z;
                    }
                    zeros[pos + f] += z;
                    totals[pos + f] += area;
                }
            }
            pos += a.shape.channels;
        }
    }

    std::vector<FilterScore> out;
    out.reserve(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const double apoz = static_cast<double>(zeros[i]) /
                            static_cast<double>(totals[i]);
        out.push_back(FilterScore{keys[i], 1.0 - apoz, Criterion::APoZ});
    }
    return out;
}

void write_scores_csv(std::ostream& out,
                      const std::vector<FilterScore>& scores) {
    out << "layer_index,filter_index,criterion,score\n";
    for (const FilterScore& s : scores) {
        out << s.key.layer_index << "," << s.key.filter_index << ","
            << criterion_name(s.criterion) << "," << format_double(s.score)
            << "\n";
    }
}

}  // namespace plsprune
