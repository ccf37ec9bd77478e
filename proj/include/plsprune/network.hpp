#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "plsprune/data.hpp"
#include "plsprune/matrix.hpp"

namespace plsprune {

enum class LayerKind {
    Conv2D,
    ReLU,
    MaxPool2x2,
    GlobalMaxPool,
    GlobalAvgPool,
    Flatten,
    Dense,
    Softmax,
};

const char* layer_kind_name(LayerKind kind);

/// One layer of a plain (chain) network. Conv2D weights are stored
/// row-major as [out][in][ky][kx], Dense weights as [out][in].
struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    // Conv2D
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    // Dense
    std::size_t in_features = 0;
    std::size_t out_features = 0;

    std::vector<double> weights;
    std::vector<double> bias;

    std::size_t weight_count() const;
    std::size_t bias_count() const;
};

LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels,
                 std::size_t kernel, std::size_t stride = 1,
                 std::size_t padding = 0);
LayerSpec relu();
LayerSpec maxpool2x2();
LayerSpec global_maxpool();
LayerSpec global_avgpool();
LayerSpec flatten();
LayerSpec dense(std::size_t in_features, std::size_t out_features);
LayerSpec softmax();

/// Output geometry of a layer applied to the given input geometry.
/// Throws ShapeError when the layer cannot consume that input.
Shape3 layer_output_shape(const LayerSpec& layer, Shape3 in);

/// Plain chain of layers ending in Softmax, with at least one Conv2D
/// before the classifier head. The constructor checks end-to-end shape
/// consistency and sizes any empty weight arrays (zero-filled).
class Network {
public:
    Network(Shape3 input_shape, std::vector<LayerSpec> layers);

    const Shape3& input_shape() const { return input_shape_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::vector<LayerSpec>& layers() { return layers_; }

    /// Input geometry of layer i (output geometry of its predecessor).
    Shape3 shape_before(std::size_t layer_index) const;
    std::size_t class_count() const { return class_count_; }

private:
    Shape3 input_shape_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape3> input_shapes_;  // per layer
    std::size_t class_count_ = 0;
};

/// He-uniform initialization of all Conv2D/Dense weights, seeded.
void initialize_weights(Network& net, std::uint64_t seed);

/// Standard desk-scale classifier: per filter count a 3x3/pad-1 conv +
/// ReLU, a 2x2 max-pool after every conv except the last, then
/// Flatten -> Dense(classes) -> Softmax.
Network build_conv_classifier(Shape3 input_shape, int classes,
                              const std::vector<std::size_t>& conv_filters,
                              std::uint64_t seed);

/// A batch of input images, sample-major.
struct ImageBatch {
    std::size_t count = 0;
    Shape3 shape;
    std::vector<double> values;
};

ImageBatch batch_from(const Dataset& ds, std::size_t begin, std::size_t end);

/// Class-probability rows, one per sample; each row sums to 1.
Matrix forward(const Network& net, const ImageBatch& batch);

/// Post-activation feature maps of one Conv2D layer over a batch
/// (post-ReLU when a ReLU directly follows the conv).
struct ConvActivations {
    std::size_t layer_index = 0;
    Shape3 shape;                // per-sample output geometry of the conv
    std::vector<double> values;  // batch.count * shape.size()
};

std::pair<Matrix, std::vector<ConvActivations>> forward_with_activations(
    const Network& net, const ImageBatch& batch);

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
};

struct TrainLog {
    std::vector<double> losses;      // mean cross-entropy per epoch
    std::vector<double> accuracies;  // training accuracy per epoch
};

/// Mini-batch SGD with momentum on softmax cross-entropy, in place.
/// Throws DivergenceError naming epoch and batch if the loss goes NaN.
TrainLog train_sgd(Network& net, const Dataset& data, const TrainConfig& cfg);

/// Fraction of argmax-correct predictions. Independent of batch_size.
double evaluate(const Network& net, const Dataset& data,
                std::size_t batch_size = 64);

/// FLOPs convention: one multiply and one add each count as one
/// operation (factor 2); activations and pooling count as zero.
struct FlopsBreakdown {
    std::size_t total = 0;
    std::vector<std::pair<std::size_t, std::size_t>> per_layer;
};

FlopsBreakdown flops_count(const Network& net);
std::size_t parameter_count(const Network& net);
std::size_t conv_filter_count(const Network& net);
std::vector<std::size_t> conv_layer_indices(const Network& net);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

/// FNV-1a hash of the canonical serialized form; identifies checkpoints.
std::uint64_t network_hash(const Network& net);

}  // namespace plsprune
