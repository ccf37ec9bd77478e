#include "plsprune/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "plsprune/error.hpp"
#include "plsprune/rng.hpp"

namespace plsprune {

namespace {

std::string shape_str(Shape3 s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
           std::to_string(s.width);
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool2x2: return "maxpool2x2";
        case LayerKind::GlobalMaxPool: return "global_maxpool";
        case LayerKind::GlobalAvgPool: return "global_avgpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dense: return "dense";
        case LayerKind::Softmax: return "softmax";
    }
    return "unknown";
}

std::size_t LayerSpec::weight_count() const {
    switch (kind) {
        case LayerKind::Conv2D:
            return out_channels * in_channels * kernel * kernel;
        case LayerKind::Dense:
            return out_features * in_features;
        default:
            return 0;
    }
}

std::size_t LayerSpec::bias_count() const {
    switch (kind) {
        case LayerKind::Conv2D: return out_channels;
        case LayerKind::Dense: return out_features;
        default: return 0;
    }
}

LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels,
                 std::size_t kernel, std::size_t stride,
                 std::size_t padding) {
    LayerSpec l;
    l.kind = LayerKind::Conv2D;
    l.in_channels = in_channels;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
}

namespace {
LayerSpec plain_layer(LayerKind kind) {
    LayerSpec l;
    l.kind = kind;
    return l;
}
}  // namespace

LayerSpec relu() { return plain_layer(LayerKind::ReLU); }
LayerSpec maxpool2x2() { return plain_layer(LayerKind::MaxPool2x2); }
LayerSpec global_maxpool() { return plain_layer(LayerKind::GlobalMaxPool); }
LayerSpec global_avgpool() { return plain_layer(LayerKind::GlobalAvgPool); }
LayerSpec flatten() { return plain_layer(LayerKind::Flatten); }

LayerSpec dense(std::size_t in_features, std::size_t out_features) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.in_features = in_features;
    l.out_features = out_features;
    return l;
}

LayerSpec softmax() { return plain_layer(LayerKind::Softmax); }

Shape3 layer_output_shape(const LayerSpec& layer, Shape3 in) {
    switch (layer.kind) {
        case LayerKind::Conv2D: {
            if (layer.in_channels != in.channels) {
                throw ShapeError("conv2d expects " +
                                 std::to_string(layer.in_channels) +
                                 " input channels, got " + shape_str(in));
            }
            const std::size_t padded_h = in.height + 2 * layer.padding;
            const std::size_t padded_w = in.width + 2 * layer.padding;
            if (padded_h < layer.kernel || padded_w < layer.kernel) {
                throw ShapeError("conv2d kernel " +
                                 std::to_string(layer.kernel) +
                                 " larger than padded input " + shape_str(in));
            }
            return Shape3{layer.out_channels,
                          (padded_h - layer.kernel) / layer.stride + 1,
                          (padded_w - layer.kernel) / layer.stride + 1};
        }
        case LayerKind::ReLU:
            return in;
        case LayerKind::MaxPool2x2:
            if (in.height < 2 || in.width < 2) {
                throw ShapeError("maxpool2x2 needs spatial size >= 2, got " +
                                 shape_str(in));
            }
            return Shape3{in.channels, in.height / 2, in.width / 2};
        case LayerKind::GlobalMaxPool:
        case LayerKind::GlobalAvgPool:
            return Shape3{in.channels, 1, 1};
        case LayerKind::Flatten:
            return Shape3{in.size(), 1, 1};
        case LayerKind::Dense:
            if (layer.in_features != in.size()) {
                throw ShapeError("dense expects " +
                                 std::to_string(layer.in_features) +
                                 " inputs, got " + shape_str(in) + " = " +
                                 std::to_string(in.size()));
            }
            return Shape3{layer.out_features, 1, 1};
        case LayerKind::Softmax:
            return in;
    }
    throw ShapeError("unknown layer kind");
}

Network::Network(Shape3 input_shape, std::vector<LayerSpec> layers)
    : input_shape_(input_shape), layers_(std::move(layers)) {
    if (layers_.empty()) {
        throw ShapeError("network needs at least one layer");
    }
    bool has_conv = false;
    Shape3 cur = input_shape_;
    input_shapes_.reserve(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        LayerSpec& l = layers_[i];
        input_shapes_.push_back(cur);
        cur = layer_output_shape(l, cur);
        if (l.kind == LayerKind::Conv2D) has_conv = true;
        if (l.weights.empty()) {
            l.weights.assign(l.weight_count(), 0.0);
        } else if (l.weights.size() != l.weight_count()) {
            throw IntegrityError(
                "layer " + std::to_string(i) + " (" +
                layer_kind_name(l.kind) + ") has " +
                std::to_string(l.weights.size()) + " weights, expected " +
                std::to_string(l.weight_count()));
        }
        if (l.bias.empty()) {
            l.bias.assign(l.bias_count(), 0.0);
        } else if (l.bias.size() != l.bias_count()) {
            throw IntegrityError(
                "layer " + std::to_string(i) + " (" +
                layer_kind_name(l.kind) + ") has " +
                std::to_string(l.bias.size()) + " bias values, expected " +
                std::to_string(l.bias_count()));
        }
    }
    if (!has_conv) {
        throw ShapeError("network needs at least one conv2d layer");
    }
    if (layers_.back().kind != LayerKind::Softmax) {
        throw ShapeError("network must end in a softmax layer");
    }
    class_count_ = cur.size();
}

Shape3 Network::shape_before(std::size_t layer_index) const {
    return input_shapes_[layer_index];
}

void initialize_weights(Network& net, std::uint64_t seed) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        LayerSpec& l = net.layers()[i];
        std::size_t fan_in = 0;
        if (l.kind == LayerKind::Conv2D) {
            fan_in = l.in_channels * l.kernel * l.kernel;
        } else if (l.kind == LayerKind::Dense) {
            fan_in = l.in_features;
        } else {
            continue;
        }
        Rng rng(derive_seed(seed, i));
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& w : l.weights) w = rng.uniform(-limit, limit);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
}

Network build_conv_classifier(Shape3 input_shape, int classes,
                              const std::vector<std::size_t>& conv_filters,
                              std::uint64_t seed) {
    if (conv_filters.empty()) {
        throw ParamError("classifier needs at least one conv layer");
    }
    std::vector<LayerSpec> layers;
    Shape3 cur = input_shape;
    for (std::size_t i = 0; i < conv_filters.size(); ++i) {
        layers.push_back(conv2d(cur.channels, conv_filters[i], 3, 1, 1));
        cur = layer_output_shape(layers.back(), cur);
        layers.push_back(relu());
        if (i + 1 < conv_filters.size()) {
            layers.push_back(maxpool2x2());
            cur = layer_output_shape(layers.back(), cur);
        }
    }
    layers.push_back(flatten());
    layers.push_back(dense(cur.size(), static_cast<std::size_t>(classes)));
    layers.push_back(softmax());
    Network net(input_shape, std::move(layers));
    initialize_weights(net, seed);
    return net;
}

ImageBatch batch_from(const Dataset& ds, std::size_t begin, std::size_t end) {
    ImageBatch b;
    b.count = end - begin;
    b.shape = ds.shape;
    b.values.assign(ds.images.begin() + begin * ds.shape.size(),
                    ds.images.begin() + end * ds.shape.size());
    return b;
}

// --------------------------------------------------------------------------
// Forward / backward kernels. All operate on one sample at a time; batch
// loops live in the drivers below.
// --------------------------------------------------------------------------

namespace {

void conv_forward_sample(const LayerSpec& l, const double* in, Shape3 is,
                         double* out, Shape3 os) {
    const std::size_t h = is.height, w = is.width;
    const std::size_t ho = os.height, wo = os.width;
    const long k = static_cast<long>(l.kernel);
    const long s = static_cast<long>(l.stride);
    const long p = static_cast<long>(l.padding);

    for (std::size_t o = 0; o < l.out_channels; ++o) {
        std::fill(out + o * ho * wo, out + (o + 1) * ho * wo, l.bias[o]);
    }
    for (std::size_t o = 0; o < l.out_channels; ++o) {
        double* oc = out + o * ho * wo;
        const double* wf = l.weights.data() + o * l.in_channels * k * k;
        for (std::size_t i = 0; i < l.in_channels; ++i) {
            const double* ic = in + i * h * w;
            const double* wk = wf + i * k * k;
            for (long ky = 0; ky < k; ++ky) {
                const long oy = ky - p;
                long y_lo = oy >= 0 ? 0 : (-oy + s - 1) / s;
                long y_hi = static_cast<long>(h) - 1 - oy;
                y_hi = y_hi < 0 ? -1 : std::min(y_hi / s,
                                                static_cast<long>(ho) - 1);
                for (long kx = 0; kx < k; ++kx) {
                    const double wv = wk[ky * k + kx];
                    if (wv == 0.0) continue;
                    const long ox = kx - p;
                    long x_lo = ox >= 0 ? 0 : (-ox + s - 1) / s;
                    long x_hi = static_cast<long>(w) - 1 - ox;
                    x_hi = x_hi < 0 ? -1
                                    : std::min(x_hi / s,
                                               static_cast<long>(wo) - 1);
                    for (long y = y_lo; y <= y_hi; ++y) {
                        const double* irow = ic + (y * s + oy) * w;
                        double* orow = oc + y * wo;
                        for (long x = x_lo; x <= x_hi; ++x) {
                            orow[x] += wv * irow[x * s + ox];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward_sample(const LayerSpec& l, const double* in, Shape3 is,
                          const double* gout, Shape3 os, double* gin,
                          double* gw, double* gb) {
    const std::size_t h = is.height, w = is.width;
    const std::size_t ho = os.height, wo = os.width;
    const long k = static_cast<long>(l.kernel);
    const long s = static_cast<long>(l.stride);
    const long p = static_cast<long>(l.padding);

    for (std::size_t o = 0; o < l.out_channels; ++o) {
        const double* gc = gout + o * ho * wo;
        double acc = 0.0;
        for (std::size_t t = 0; t < ho * wo; ++t) acc += gc[t];
        gb[o] += acc;
    }
    for (std::size_t o = 0; o < l.out_channels; ++o) {
        const double* gc = gout + o * ho * wo;
        const double* wf = l.weights.data() + o * l.in_channels * k * k;
        double* gwf = gw + o * l.in_channels * k * k;
        for (std::size_t i = 0; i < l.in_channels; ++i) {
            const double* ic = in + i * h * w;
            double* gic = gin + i * h * w;
            const double* wk = wf + i * k * k;
            double* gwk = gwf + i * k * k;
            for (long ky = 0; ky < k; ++ky) {
                const long oy = ky - p;
                long y_lo = oy >= 0 ? 0 : (-oy + s - 1) / s;
                long y_hi = static_cast<long>(h) - 1 - oy;
                y_hi = y_hi < 0 ? -1 : std::min(y_hi / s,
                                                static_cast<long>(ho) - 1);
                for (long kx = 0; kx < k; ++kx) {
                    const double wv = wk[ky * k + kx];
                    const long ox = kx - p;
                    long x_lo = ox >= 0 ? 0 : (-ox + s - 1) / s;
                    long x_hi = static_cast<long>(w) - 1 - ox;
                    x_hi = x_hi < 0 ? -1
                                    : std::min(x_hi / s,
                                               static_cast<long>(wo) - 1);
                    double wacc = 0.0;
                    for (long y = y_lo; y <= y_hi; ++y) {
                        const double* irow = ic + (y * s + oy) * w;
                        double* girow = gic + (y * s + oy) * w;
                        const double* grow = gc + y * wo;
                        for (long x = x_lo; x <= x_hi; ++x) {
                            const double g = grow[x];
                            wacc += g * irow[x * s + ox];
                            girow[x * s + ox] += wv * g;
                        }
                    }
                    gwk[ky * k + kx] += wacc;
                }
            }
        }
    }
}

void dense_forward_sample(const LayerSpec& l, const double* in, double* out) {
    for (std::size_t o = 0; o < l.out_features; ++o) {
        const double* wrow = l.weights.data() + o * l.in_features;
        double acc = l.bias[o];
        for (std::size_t j = 0; j < l.in_features; ++j) {
            if (wrow[j] != 0.0) acc += wrow[j] * in[j];
        }
        out[o] = acc;
    }
}

void dense_backward_sample(const LayerSpec& l, const double* in,
                           const double* gout, double* gin, double* gw,
                           double* gb) {
    for (std::size_t o = 0; o < l.out_features; ++o) {
        const double g = gout[o];
        gb[o] += g;
        const double* wrow = l.weights.data() + o * l.in_features;
        double* gwrow = gw + o * l.in_features;
        for (std::size_t j = 0; j < l.in_features; ++j) {
            gwrow[j] += g * in[j];
            gin[j] += wrow[j] * g;
        }
    }
}

void maxpool_forward_sample(const double* in, Shape3 is, double* out,
                            Shape3 os) {
    const std::size_t h = is.height, w = is.width;
    const std::size_t ho = os.height, wo = os.width;
    for (std::size_t c = 0; c < is.channels; ++c) {
        const double* ic = in + c * h * w;
        double* oc = out + c * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t x = 0; x < wo; ++x) {
                const double* base = ic + 2 * y * w + 2 * x;
                double best = base[0];
                if (base[1] > best) best = base[1];
                if (base[w] > best) best = base[w];
                if (base[w + 1] > best) best = base[w + 1];
                oc[y * wo + x] = best;
            }
        }
    }
}

void maxpool_backward_sample(const double* in, Shape3 is, const double* gout,
                             Shape3 os, double* gin) {
    const std::size_t h = is.height, w = is.width;
    const std::size_t ho = os.height, wo = os.width;
    for (std::size_t c = 0; c < is.channels; ++c) {
        const double* ic = in + c * h * w;
        double* gic = gin + c * h * w;
        const double* gc = gout + c * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t x = 0; x < wo; ++x) {
                const std::size_t base = 2 * y * w + 2 * x;
                // First maximum in row-major block order gets the gradient.
                std::size_t arg = base;
                if (ic[base + 1] > ic[arg]) arg = base + 1;
                if (ic[base + w] > ic[arg]) arg = base + w;
                if (ic[base + w + 1] > ic[arg]) arg = base + w + 1;
                gic[arg] += gc[y * wo + x];
            }
        }
    }
}

void global_pool_forward_sample(LayerKind kind, const double* in, Shape3 is,
                                double* out) {
    const std::size_t area = is.height * is.width;
    for (std::size_t c = 0; c < is.channels; ++c) {
        const double* ic = in + c * area;
        if (kind == LayerKind::GlobalMaxPool) {
            double best = ic[0];
            for (std::size_t t = 1; t < area; ++t) {
                if (ic[t] > best) best = ic[t];
            }
            out[c] = best;
        } else {
            double acc = 0.0;
            for (std::size_t t = 0; t < area; ++t) acc += ic[t];
            out[c] = acc / static_cast<double>(area);
        }
    }
}

void global_pool_backward_sample(LayerKind kind, const double* in, Shape3 is,
                                 const double* gout, double* gin) {
    const std::size_t area = is.height * is.width;
    for (std::size_t c = 0; c < is.channels; ++c) {
        const double* ic = in + c * area;
        double* gic = gin + c * area;
        if (kind == LayerKind::GlobalMaxPool) {
            std::size_t arg = 0;
            for (std::size_t t = 1; t < area; ++t) {
                if (ic[t] > ic[arg]) arg = t;
            }
            gic[arg] += gout[c];
        } else {
            const double share = gout[c] / static_cast<double>(area);
            for (std::size_t t = 0; t < area; ++t) gic[t] += share;
        }
    }
}

void softmax_forward_sample(const double* in, std::size_t n, double* out) {
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

struct ForwardTrace {
    std::vector<std::vector<double>> outputs;  // per layer, batch-major
    std::vector<Shape3> out_shapes;
};

void run_forward(const Network& net, const ImageBatch& batch,
                 ForwardTrace& trace) {
    if (!(batch.shape == net.input_shape())) {
        throw ShapeError("batch shape " + shape_str(batch.shape) +
                         " does not match network input " +
                         shape_str(net.input_shape()));
    }
    const auto& layers = net.layers();
    trace.outputs.assign(layers.size(), {});
    trace.out_shapes.assign(layers.size(), {});

    const std::vector<double>* cur = &batch.values;
    Shape3 cur_shape = batch.shape;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const LayerSpec& l = layers[li];
        const Shape3 out_shape = layer_output_shape(l, cur_shape);
        std::vector<double>& out = trace.outputs[li];
        out.assign(batch.count * out_shape.size(), 0.0);
        const std::size_t in_sz = cur_shape.size();
        const std::size_t out_sz = out_shape.size();
        for (std::size_t s = 0; s < batch.count; ++s) {
            const double* in = cur->data() + s * in_sz;
            double* o = out.data() + s * out_sz;
            switch (l.kind) {
                case LayerKind::Conv2D:
                    conv_forward_sample(l, in, cur_shape, o, out_shape);
                    break;
                case LayerKind::ReLU:
                    for (std::size_t t = 0; t < in_sz; ++t) {
                        o[t] = in[t] > 0.0 ? in[t] : 0.0;
                    }
                    break;
                case LayerKind::MaxPool2x2:
                    maxpool_forward_sample(in, cur_shape, o, out_shape);
                    break;
                case LayerKind::GlobalMaxPool:
                case LayerKind::GlobalAvgPool:
                    global_pool_forward_sample(l.kind, in, cur_shape, o);
                    break;
                case LayerKind::Flatten:
                    std::copy(in, in + in_sz, o);
                    break;
                case LayerKind::Dense:
                    dense_forward_sample(l, in, o);
                    break;
                case LayerKind::Softmax:
                    softmax_forward_sample(in, in_sz, o);
                    break;
            }
        }
        trace.out_shapes[li] = out_shape;
        cur = &out;
        cur_shape = out_shape;
    }
}

Matrix probabilities_from_trace(const Network& net, const ImageBatch& batch,
                                const ForwardTrace& trace) {
    const std::size_t k = net.class_count();
    return Matrix(batch.count, k, trace.outputs.back());
}

struct LayerGrad {
    std::vector<double> weights;
    std::vector<double> bias;
};

// Backpropagates from the softmax input gradient `delta` (batch-major,
// count x class_count) down to the first layer, accumulating parameter
// gradients. The softmax layer itself is fused with the cross-entropy
// loss by the caller.
void run_backward(const Network& net, const ImageBatch& batch,
                  const ForwardTrace& trace, std::vector<double> delta,
                  std::vector<LayerGrad>& grads) {
    const auto& layers = net.layers();
    const std::size_t last = layers.size() - 1;  // softmax, handled by caller
    Shape3 delta_shape = last == 0 ? batch.shape : trace.out_shapes[last - 1];

    for (std::size_t li = last; li-- > 0;) {
        const LayerSpec& l = layers[li];
        const Shape3 in_shape = net.shape_before(li);
        const std::size_t in_sz = in_shape.size();
        const std::size_t out_sz = delta_shape.size();
        const std::vector<double>& in_buf =
            li == 0 ? batch.values : trace.outputs[li - 1];
        std::vector<double> gin(batch.count * in_sz, 0.0);

        for (std::size_t s = 0; s < batch.count; ++s) {
            const double* in = in_buf.data() + s * in_sz;
            const double* gout = delta.data() + s * out_sz;
            double* gi = gin.data() + s * in_sz;
            switch (l.kind) {
                case LayerKind::Conv2D:
                    conv_backward_sample(l, in, in_shape, gout, delta_shape,
                                         gi, grads[li].weights.data(),
                                         grads[li].bias.data());
                    break;
                case LayerKind::ReLU:
                    for (std::size_t t = 0; t < in_sz; ++t) {
                        gi[t] = in[t] > 0.0 ? gout[t] : 0.0;
                    }
                    break;
                case LayerKind::MaxPool2x2:
                    maxpool_backward_sample(in, in_shape, gout, delta_shape,
                                            gi);
                    break;
                case LayerKind::GlobalMaxPool:
                case LayerKind::GlobalAvgPool:
                    global_pool_backward_sample(l.kind, in, in_shape, gout,
                                                gi);
                    break;
                case LayerKind::Flatten:
                    std::copy(gout, gout + out_sz, gi);
                    break;
                case LayerKind::Dense:
                    dense_backward_sample(l, in, gout, gi,
                                          grads[li].weights.data(),
                                          grads[li].bias.data());
                    break;
                case LayerKind::Softmax:
                    throw Error("softmax before the final layer is"
                                " unsupported in training");
            }
        }
        delta = std::move(gin);
        delta_shape = in_shape;
    }
}

}  // namespace

Matrix forward(const Network& net, const ImageBatch& batch) {
    ForwardTrace trace;
    run_forward(net, batch, trace);
    return probabilities_from_trace(net, batch, trace);
}

std::pair<Matrix, std::vector<ConvActivations>> forward_with_activations(
    const Network& net, const ImageBatch& batch) {
    ForwardTrace trace;
    run_forward(net, batch, trace);

    std::vector<ConvActivations> acts;
    const auto& layers = net.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (layers[li].kind != LayerKind::Conv2D) continue;
        // Capture after the nonlinearity when one directly follows, so the
        // representation matches what downstream layers consume.
        const bool relu_next = li + 1 < layers.size() &&
                               layers[li + 1].kind == LayerKind::ReLU;
        const std::size_t src = relu_next ? li + 1 : li;
        ConvActivations a;
        a.layer_index = li;
        a.shape = trace.out_shapes[li];
        a.values = trace.outputs[src];
        acts.push_back(std::move(a));
    }
    return {probabilities_from_trace(net, batch, trace), std::move(acts)};
}

TrainLog train_sgd(Network& net, const Dataset& data, const TrainConfig& cfg) {
    if (data.count == 0) throw DataError("training dataset is empty");
    if (cfg.batch_size < 1) throw ParamError("batch_size must be >= 1");
    if (cfg.learning_rate < 0.0) {
        throw ParamError("learning_rate must be >= 0");
    }
    const std::size_t k = net.class_count();
    for (int label : data.labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw DataError("label " + std::to_string(label) +
                            " outside [0, " + std::to_string(k) + ")");
        }
    }

    auto& layers = net.layers();
    std::vector<LayerGrad> grads(layers.size());
    std::vector<LayerGrad> velocity(layers.size());
    for (std::size_t li = 0; li < layers.size(); ++li) {
        grads[li].weights.assign(layers[li].weights.size(), 0.0);
        grads[li].bias.assign(layers[li].bias.size(), 0.0);
        velocity[li].weights.assign(layers[li].weights.size(), 0.0);
        velocity[li].bias.assign(layers[li].bias.size(), 0.0);
    }

    TrainLog log;
    std::vector<std::size_t> order(data.count);
    for (std::size_t i = 0; i < data.count; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, epoch));
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = i + rng.below(order.size() - i);
            std::swap(order[i], order[j]);
        }

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < data.count;
             start += cfg.batch_size, ++batch_no) {
            const std::size_t end =
                std::min(start + cfg.batch_size, data.count);
            const std::size_t bsz = end - start;

            ImageBatch batch;
            batch.count = bsz;
            batch.shape = data.shape;
            batch.values.reserve(bsz * data.shape.size());
            std::vector<int> labels(bsz);
            for (std::size_t t = 0; t < bsz; ++t) {
                const auto row = data.sample(order[start + t]);
                batch.values.insert(batch.values.end(), row.begin(),
                                    row.end());
                labels[t] = data.labels[order[start + t]];
            }

            ForwardTrace trace;
            run_forward(net, batch, trace);
            const std::vector<double>& probs = trace.outputs.back();

            double batch_loss = 0.0;
            std::vector<double> delta(bsz * k);
            for (std::size_t s = 0; s < bsz; ++s) {
                const double* row = probs.data() + s * k;
                const double p = row[labels[s]];
                batch_loss += -std::log(std::max(p, 1e-300));
                std::size_t arg = 0;
                for (std::size_t j = 1; j < k; ++j) {
                    if (row[j] > row[arg]) arg = j;
                }
                if (arg == static_cast<std::size_t>(labels[s])) ++correct;
                for (std::size_t j = 0; j < k; ++j) {
                    delta[s * k + j] =
                        (row[j] - (j == static_cast<std::size_t>(labels[s])
                                       ? 1.0
                                       : 0.0)) /
                        static_cast<double>(bsz);
                }
            }
            batch_loss /= static_cast<double>(bsz);
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("training diverged: non-finite loss at"
                                      " epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_no));
            }
            loss_sum += batch_loss * static_cast<double>(bsz);

            for (auto& g : grads) {
                std::fill(g.weights.begin(), g.weights.end(), 0.0);
                std::fill(g.bias.begin(), g.bias.end(), 0.0);
            }
            run_backward(net, batch, trace, std::move(delta), grads);

            for (std::size_t li = 0; li < layers.size(); ++li) {
                auto& l = layers[li];
                auto& v = velocity[li];
                const auto& g = grads[li];
                for (std::size_t t = 0; t < l.weights.size(); ++t) {
                    v.weights[t] = cfg.momentum * v.weights[t] -
                                   cfg.learning_rate * g.weights[t];
                    l.weights[t] += v.weights[t];
                }
                for (std::size_t t = 0; t < l.bias.size(); ++t) {
                    v.bias[t] = cfg.momentum * v.bias[t] -
                                cfg.learning_rate * g.bias[t];
                    l.bias[t] += v.bias[t];
                }
            }
        }
        log.losses.push_back(loss_sum / static_cast<double>(data.count));
        log.accuracies.push_back(static_cast<double>(correct) /
                                 static_cast<double>(data.count));
    }
    return log;
}

double evaluate(const Network& net, const Dataset& data,
                std::size_t batch_size) {
    if (data.count == 0) throw DataError("evaluation dataset is empty");
    const std::size_t k = net.class_count();
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.count; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, data.count);
        const Matrix probs = forward(net, batch_from(data, start, end));
        for (std::size_t s = 0; s < probs.rows(); ++s) {
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (probs(s, j) > probs(s, arg)) arg = j;
            }
            if (arg == static_cast<std::size_t>(data.labels[start + s])) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.count);
}

FlopsBreakdown flops_count(const Network& net) {
    FlopsBreakdown out;
    Shape3 cur = net.input_shape();
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
        const LayerSpec& l = net.layers()[li];
        const Shape3 next = layer_output_shape(l, cur);
        std::size_t flops = 0;
        if (l.kind == LayerKind::Conv2D) {
            flops = 2 * l.kernel * l.kernel * l.in_channels * l.out_channels *
                    next.height * next.width;
        } else if (l.kind == LayerKind::Dense) {
            flops = 2 * l.in_features * l.out_features;
        }
        out.per_layer.emplace_back(li, flops);
        out.total += flops;
        cur = next;
    }
    return out;
}

std::size_t parameter_count(const Network& net) {
    std::size_t total = 0;
    for (const LayerSpec& l : net.layers()) {
        total += l.weights.size() + l.bias.size();
    }
    return total;
}

std::size_t conv_filter_count(const Network& net) {
    std::size_t total = 0;
    for (const LayerSpec& l : net.layers()) {
        if (l.kind == LayerKind::Conv2D) total += l.out_channels;
    }
    return total;
}

std::vector<std::size_t> conv_layer_indices(const Network& net) {
    std::vector<std::size_t> out;
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
        if (net.layers()[li].kind == LayerKind::Conv2D) out.push_back(li);
    }
    return out;
}

namespace {

constexpr int kModelVersion = 1;

LayerKind kind_from_name(const std::string& name) {
    for (LayerKind k :
         {LayerKind::Conv2D, LayerKind::ReLU, LayerKind::MaxPool2x2,
          LayerKind::GlobalMaxPool, LayerKind::GlobalAvgPool,
          LayerKind::Flatten, LayerKind::Dense, LayerKind::Softmax}) {
        if (name == layer_kind_name(k)) return k;
    }
    throw ParseError("unknown layer kind: " + name);
}

nlohmann::json network_to_json(const Network& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : net.layers()) {
        nlohmann::json j{{"kind", layer_kind_name(l.kind)}};
        if (l.kind == LayerKind::Conv2D) {
            j["in_channels"] = l.in_channels;
            j["out_channels"] = l.out_channels;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
            j["weights"] = l.weights;
            j["bias"] = l.bias;
        } else if (l.kind == LayerKind::Dense) {
            j["in_features"] = l.in_features;
            j["out_features"] = l.out_features;
            j["weights"] = l.weights;
            j["bias"] = l.bias;
        }
        layers.push_back(std::move(j));
    }
    return nlohmann::json{
        {"format", "plsprune-model"},
        {"version", kModelVersion},
        {"input_shape",
         {{"channels", net.input_shape().channels},
          {"height", net.input_shape().height},
          {"width", net.input_shape().width}}},
        {"layers", std::move(layers)},
    };
}

}  // namespace

void save_network(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path.string());
    out << network_to_json(net).dump(2) << "\n";
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("model parse error at byte " +
                         std::to_string(e.byte) + ": " + e.what());
    }
    if (j.value("format", "") != "plsprune-model") {
        throw ParseError("not a model file: " + path.string());
    }
    if (j.value("version", -1) != kModelVersion) {
        throw IntegrityError("unsupported model version " +
                             std::to_string(j.value("version", -1)) +
                             ", expected " + std::to_string(kModelVersion));
    }
    Shape3 input{j.at("input_shape").at("channels").get<std::size_t>(),
                 j.at("input_shape").at("height").get<std::size_t>(),
                 j.at("input_shape").at("width").get<std::size_t>()};
    std::vector<LayerSpec> layers;
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.kind = kind_from_name(lj.at("kind").get<std::string>());
        if (l.kind == LayerKind::Conv2D) {
            l.in_channels = lj.at("in_channels").get<std::size_t>();
            l.out_channels = lj.at("out_channels").get<std::size_t>();
            l.kernel = lj.at("kernel").get<std::size_t>();
            l.stride = lj.at("stride").get<std::size_t>();
            l.padding = lj.at("padding").get<std::size_t>();
            l.weights = lj.at("weights").get<std::vector<double>>();
            l.bias = lj.at("bias").get<std::vector<double>>();
        } else if (l.kind == LayerKind::Dense) {
            l.in_features = lj.at("in_features").get<std::size_t>();
            l.out_features = lj.at("out_features").get<std::size_t>();
            l.weights = lj.at("weights").get<std::vector<double>>();
            l.bias = lj.at("bias").get<std::vector<double>>();
        }
        layers.push_back(std::move(l));
    }
    // The constructor re-checks shape consistency and weight counts.
    return Network(input, std::move(layers));
}

std::uint64_t network_hash(const Network& net) {
    const std::string dump = network_to_json(net).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace plsprune
