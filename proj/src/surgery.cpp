#include "plsprune/surgery.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <set>

#include "plsprune/error.hpp"

namespace plsprune {

RemovalPlan select_filters(const std::vector<FilterScore>& scores,
                           double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ParamError("pruning ratio must be in (0,1), got " +
                         std::to_string(ratio));
    }
    if (scores.empty()) throw ParamError("no filter scores given");

    std::set<FilterKey> seen;
    std::map<std::size_t, std::size_t> remaining;  // layer -> live filters
    for (const FilterScore& s : scores) {
        if (!seen.insert(s.key).second) {
            throw ParamError("duplicate score for layer " +
                             std::to_string(s.key.layer_index) + " filter " +
                             std::to_string(s.key.filter_index));
        }
        ++remaining[s.key.layer_index];
    }

    std::vector<const FilterScore*> order;
    order.reserve(scores.size());
    for (const FilterScore& s : scores) order.push_back(&s);
    std::sort(order.begin(), order.end(),
              [](const FilterScore* a, const FilterScore* b) {
                  if (a->score != b->score) return a->score < b->score;
                  return a->key < b->key;
              });

    RemovalPlan plan;
    plan.ratio = ratio;
    plan.requested = static_cast<std::size_t>(
        ratio * static_cast<double>(scores.size()));
    for (const FilterScore* s : order) {
        if (plan.victims.size() == plan.requested) break;
        auto& live = remaining[s->key.layer_index];
        if (live <= 1) continue;  // never empty a layer
        --live;
        plan.victims.push_back(s->key);
        ++plan.per_layer_counts[s->key.layer_index];
    }
    std::sort(plan.victims.begin(), plan.victims.end());
    return plan;
}

namespace {

std::vector<double> slice_conv_weights(const LayerSpec& l,
                                       const std::vector<std::size_t>& out_keep,
                                       const std::vector<std::size_t>& in_keep) {
    const std::size_t kk = l.kernel * l.kernel;
    std::vector<double> out;
    out.reserve(out_keep.size() * in_keep.size() * kk);
    for (std::size_t o : out_keep) {
        const double* oc = l.weights.data() + o * l.in_channels * kk;
        for (std::size_t i : in_keep) {
            const double* wk = oc + i * kk;
            out.insert(out.end(), wk, wk + kk);
        }
    }
    return out;
}

}  // namespace

Network prune_network(const Network& net, const RemovalPlan& plan) {
    const auto& layers = net.layers();

    // Victims grouped by layer, validated against the actual geometry.
    std::map<std::size_t, std::set<std::size_t>> victims;
    for (const FilterKey& key : plan.victims) {
        if (key.layer_index >= layers.size() ||
            layers[key.layer_index].kind != LayerKind::Conv2D ||
            key.filter_index >= layers[key.layer_index].out_channels) {
            throw SurgeryError("plan names filter " +
                               std::to_string(key.filter_index) +
                               " of layer " +
                               std::to_string(key.layer_index) +
                               ", which does not exist");
        }
        victims[key.layer_index].insert(key.filter_index);
    }

    std::vector<LayerSpec> rebuilt;
    rebuilt.reserve(layers.size());
    // Unit indices of the upstream selection still to be consumed by the
    // next weighted layer: channel indices right after a pruned conv,
    // expanded to flat element indices when passing Flatten.
    std::optional<std::vector<std::size_t>> kept;
    Shape3 cur = net.input_shape();  // original geometry walk

    for (std::size_t li = 0; li < layers.size(); ++li) {
        const LayerSpec& l = layers[li];
        const Shape3 out_shape = layer_output_shape(l, cur);
        switch (l.kind) {
            case LayerKind::Conv2D: {
                std::vector<std::size_t> in_keep;
                if (kept) {
                    in_keep = *kept;
                } else {
                    in_keep.resize(l.in_channels);
                    std::iota(in_keep.begin(), in_keep.end(), 0);
                }
                std::vector<std::size_t> out_keep;
                const auto it = victims.find(li);
                for (std::size_t f = 0; f < l.out_channels; ++f) {
                    if (it == victims.end() || !it->second.count(f)) {
                        out_keep.push_back(f);
                    }
                }
                if (out_keep.empty()) {
                    throw SurgeryError("plan would empty conv layer " +
                                       std::to_string(li));
                }
                LayerSpec nl = conv2d(in_keep.size(), out_keep.size(),
                                      l.kernel, l.stride, l.padding);
                nl.weights = slice_conv_weights(l, out_keep, in_keep);
                for (std::size_t o : out_keep) nl.bias.push_back(l.bias[o]);
                rebuilt.push_back(std::move(nl));
                kept = (it == victims.end())
                           ? std::nullopt
                           : std::optional<std::vector<std::size_t>>(out_keep);
                break;
            }
            case LayerKind::ReLU:
            case LayerKind::MaxPool2x2:
            case LayerKind::GlobalMaxPool:
            case LayerKind::GlobalAvgPool:
                // Channel count and order pass through unchanged.
                rebuilt.push_back(l);
                break;
            case LayerKind::Flatten: {
                rebuilt.push_back(l);
                if (kept) {
                    // Selection was over channels; flattening turns it into
                    // the corresponding row-major element columns.
                    const std::size_t block = cur.height * cur.width;
                    std::vector<std::size_t> flat;
                    flat.reserve(kept->size() * block);
                    for (std::size_t c : *kept) {
                        for (std::size_t j = 0; j < block; ++j) {
                            flat.push_back(c * block + j);
                        }
                    }
                    kept = std::move(flat);
                }
                break;
            }
            case LayerKind::Dense: {
                if (kept) {
                    // Selection units are elements of the dense input; a
                    // dense after a global pool sees one unit per channel,
                    // so the channel indices already are column indices.
                    LayerSpec nl = dense(kept->size(), l.out_features);
                    nl.weights.reserve(kept->size() * l.out_features);
                    for (std::size_t o = 0; o < l.out_features; ++o) {
                        const double* row =
                            l.weights.data() + o * l.in_features;
                        for (std::size_t j : *kept) {
                            nl.weights.push_back(row[j]);
                        }
                    }
                    nl.bias = l.bias;
                    rebuilt.push_back(std::move(nl));
                    kept.reset();
                } else {
                    rebuilt.push_back(l);
                }
                break;
            }
            case LayerKind::Softmax:
                if (kept) {
                    throw SurgeryError(
                        "no rewiring rule for pruned channels reaching"
                        " softmax (layer " +
                        std::to_string(li) + ")");
                }
                rebuilt.push_back(l);
                break;
        }
        cur = out_shape;
    }
    if (kept) {
        throw SurgeryError("pruned channels were never consumed by a"
                           " weighted layer");
    }
    return Network(net.input_shape(), std::move(rebuilt));
}

std::vector<std::string> validate_consistency(const Network& net) {
    std::vector<std::string> diags;
    Shape3 cur = net.input_shape();
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
        const LayerSpec& l = net.layers()[li];
        Shape3 next;
        try {
            next = layer_output_shape(l, cur);
        } catch (const ShapeError& e) {
            diags.push_back("layer " + std::to_string(li) + ": " + e.what());
            return diags;  // downstream shapes are meaningless now
        }
        if (l.weights.size() != l.weight_count()) {
            diags.push_back("layer " + std::to_string(li) + " (" +
                            layer_kind_name(l.kind) + "): expected " +
                            std::to_string(l.weight_count()) +
                            " weights, actual " +
                            std::to_string(l.weights.size()));
        }
        if (l.bias.size() != l.bias_count()) {
            diags.push_back("layer " + std::to_string(li) + " (" +
                            layer_kind_name(l.kind) + "): expected " +
                            std::to_string(l.bias_count()) +
                            " bias values, actual " +
                            std::to_string(l.bias.size()));
        }
        cur = next;
    }
    if (net.layers().back().kind != LayerKind::Softmax) {
        diags.push_back("final layer is not softmax");
    }
    return diags;
}

nlohmann::json plan_to_json(const RemovalPlan& plan) {
    nlohmann::json victims = nlohmann::json::array();
    for (const FilterKey& k : plan.victims) {
        victims.push_back({{"layer_index", k.layer_index},
                           {"filter_index", k.filter_index}});
    }
    nlohmann::json per_layer = nlohmann::json::object();
    for (const auto& [layer, count] : plan.per_layer_counts) {
        per_layer[std::to_string(layer)] = count;
    }
    return nlohmann::json{{"ratio", plan.ratio},
                          {"requested", plan.requested},
                          {"victims", std::move(victims)},
                          {"per_layer_counts", std::move(per_layer)}};
}

RemovalPlan plan_from_json(const nlohmann::json& j) {
    RemovalPlan plan;
    plan.ratio = j.at("ratio").get<double>();
    plan.requested = j.at("requested").get<std::size_t>();
    for (const auto& v : j.at("victims")) {
        plan.victims.push_back(
            FilterKey{v.at("layer_index").get<std::size_t>(),
                      v.at("filter_index").get<std::size_t>()});
    }
    for (const auto& [key, value] : j.at("per_layer_counts").items()) {
        plan.per_layer_counts[std::stoul(key)] = value.get<std::size_t>();
    }
    return plan;
}

}  // namespace plsprune
