#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "plsprune/error.hpp"
#include "plsprune/rng.hpp"
#include "plsprune/surgery.hpp"
#include "test_helpers.hpp"

using namespace plsprune;

namespace {

std::vector<FilterScore> make_scores(
    const std::vector<std::pair<FilterKey, double>>& entries) {
    std::vector<FilterScore> out;
    for (const auto& [key, score] : entries) {
        out.push_back(FilterScore{key, score, Criterion::PlsVip});
    }
    return out;
}

ImageBatch random_batch(std::size_t count, Shape3 shape, std::uint64_t seed) {
    Rng rng(seed);
    ImageBatch b;
    b.count = count;
    b.shape = shape;
    b.values.resize(count * shape.size());
    for (double& v : b.values) v = rng.uniform(0.0, 1.0);
    return b;
}

// conv -> relu -> maxpool -> conv -> relu -> flatten -> dense -> softmax
Network deep_net(std::uint64_t seed) {
    Network net(Shape3{1, 8, 8},
                {conv2d(1, 8, 3, 1, 1), relu(), maxpool2x2(),
                 conv2d(8, 6, 3, 1, 1), relu(), flatten(),
                 dense(6 * 4 * 4, 3), softmax()});
    initialize_weights(net, seed);
    return net;
}

// Zeroes the outgoing weights of one filter: the consuming conv's input
// slices, or the consuming dense's flattened columns.
void zero_outgoing(Network& net, FilterKey victim) {
    const auto& layers = net.layers();
    Shape3 cur = net.input_shape();
    std::vector<Shape3> in_shapes;
    for (const auto& l : layers) {
        in_shapes.push_back(cur);
        cur = layer_output_shape(l, cur);
    }
    for (std::size_t li = victim.layer_index + 1; li < layers.size(); ++li) {
        LayerSpec& l = net.layers()[li];
        if (l.kind == LayerKind::Conv2D) {
            const std::size_t kk = l.kernel * l.kernel;
            for (std::size_t o = 0; o < l.out_channels; ++o) {
                double* slice = l.weights.data() +
                                (o * l.in_channels + victim.filter_index) * kk;
                std::fill(slice, slice + kk, 0.0);
            }
            return;
        }
        if (l.kind == LayerKind::Dense) {
            const Shape3 geom = in_shapes[li];
            // Column block of the victim channel; spatial block size comes
            // from the geometry right before the dense input was flattened.
            std::size_t block = 1;
            for (std::size_t back = li; back-- > victim.layer_index;) {
                if (net.layers()[back].kind == LayerKind::Flatten) {
                    block = in_shapes[back].height * in_shapes[back].width;
                    break;
                }
            }
            (void)geom;
            for (std::size_t o = 0; o < l.out_features; ++o) {
                double* row = l.weights.data() + o * l.in_features;
                std::fill(row + victim.filter_index * block,
                          row + (victim.filter_index + 1) * block, 0.0);
            }
            return;
        }
    }
    FAIL("victim has no consuming weighted layer");
}

}  // namespace

TEST_CASE("select_filters takes the single lowest at ratio 0.1") {
    std::vector<std::pair<FilterKey, double>> entries;
    for (std::size_t f = 0; f < 10; ++f) {
        entries.push_back({FilterKey{0, f}, 1.0 + static_cast<double>(f)});
    }
    entries[7].second = 0.01;  // global minimum
    const RemovalPlan plan = select_filters(make_scores(entries), 0.1);
    REQUIRE(plan.victims.size() == 1);
    CHECK(plan.victims[0] == FilterKey{0, 7});
    CHECK(plan.requested == 1);
}

TEST_CASE("equal scores break ties by (layer, filter)") {
    std::vector<std::pair<FilterKey, double>> entries;
    for (std::size_t f = 0; f < 5; ++f) entries.push_back({FilterKey{0, f}, 3.0});
    for (std::size_t f = 0; f < 5; ++f) entries.push_back({FilterKey{2, f}, 3.0});
    const RemovalPlan plan = select_filters(make_scores(entries), 0.2);
    REQUIRE(plan.victims.size() == 2);
    CHECK(plan.victims[0] == FilterKey{0, 0});
    CHECK(plan.victims[1] == FilterKey{0, 1});
}

TEST_CASE("a single-filter layer survives even with the global minimum") {
    std::vector<std::pair<FilterKey, double>> entries;
    entries.push_back({FilterKey{0, 0}, 0.001});  // lone filter, lowest
    for (std::size_t f = 0; f < 9; ++f) {
        entries.push_back({FilterKey{2, f}, 1.0 + static_cast<double>(f)});
    }
    const RemovalPlan plan = select_filters(make_scores(entries), 0.1);
    REQUIRE(plan.victims.size() == 1);
    CHECK(plan.victims[0] == FilterKey{2, 0});
}

TEST_CASE("select_filters validates ratio and duplicates") {
    const auto scores = make_scores({{FilterKey{0, 0}, 1.0},
                                     {FilterKey{0, 1}, 2.0}});
    CHECK_THROWS_AS(select_filters(scores, 0.0), ParamError);
    CHECK_THROWS_AS(select_filters(scores, 1.0), ParamError);
    CHECK_THROWS_AS(select_filters(scores, -0.2), ParamError);
    auto dup = scores;
    dup.push_back(FilterScore{FilterKey{0, 1}, 9.0, Criterion::PlsVip});
    CHECK_THROWS_AS(select_filters(dup, 0.5), ParamError);
}

TEST_CASE("prune reshapes both the victim conv and its consumer") {
    const Network net = deep_net(3);
    RemovalPlan plan;
    plan.ratio = 0.1;
    plan.requested = 1;
    plan.victims = {FilterKey{0, 2}};
    plan.per_layer_counts[0] = 1;

    const Network pruned = prune_network(net, plan);
    CHECK(pruned.layers()[0].out_channels == 7);
    CHECK(pruned.layers()[0].weights.size() == 7 * 1 * 9);
    CHECK(pruned.layers()[0].bias.size() == 7);
    CHECK(pruned.layers()[3].in_channels == 7);
    CHECK(pruned.layers()[3].weights.size() == 6 * 7 * 9);
    CHECK(validate_consistency(pruned).empty());
}

TEST_CASE("zero-outgoing filter prunes to bit-identical outputs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Network net = deep_net(seed + 10);
        const FilterKey victim{0, seed % 8};
        zero_outgoing(net, victim);

        RemovalPlan plan;
        plan.ratio = 0.1;
        plan.requested = 1;
        plan.victims = {victim};
        plan.per_layer_counts[victim.layer_index] = 1;
        const Network pruned = prune_network(net, plan);

        const ImageBatch batch = random_batch(6, Shape3{1, 8, 8}, seed + 50);
        const Matrix a = forward(net, batch);
        const Matrix b = forward(pruned, batch);
        CHECK(a.data() == b.data());
    }
}

TEST_CASE("zero-outgoing equivalence through flatten into dense") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Network net = deep_net(seed + 30);
        const FilterKey victim{3, seed % 6};  // second conv feeds the dense
        zero_outgoing(net, victim);

        RemovalPlan plan;
        plan.ratio = 0.1;
        plan.requested = 1;
        plan.victims = {victim};
        plan.per_layer_counts[victim.layer_index] = 1;
        const Network pruned = prune_network(net, plan);
        CHECK(pruned.layers()[6].in_features == 5 * 4 * 4);

        const ImageBatch batch = random_batch(4, Shape3{1, 8, 8}, seed + 70);
        const Matrix a = forward(net, batch);
        const Matrix b = forward(pruned, batch);
        CHECK(a.data() == b.data());
    }
}

TEST_CASE("zero-outgoing equivalence through a global pool into dense") {
    Network net(Shape3{1, 6, 6},
                {conv2d(1, 5, 3, 1, 1), relu(), global_maxpool(), flatten(),
                 dense(5, 2), softmax()});
    initialize_weights(net, 91);
    const FilterKey victim{0, 3};
    // After a global pool, each channel is one dense column.
    for (std::size_t o = 0; o < 2; ++o) {
        net.layers()[4].weights[o * 5 + victim.filter_index] = 0.0;
    }
    RemovalPlan plan;
    plan.ratio = 0.1;
    plan.requested = 1;
    plan.victims = {victim};
    plan.per_layer_counts[0] = 1;
    const Network pruned = prune_network(net, plan);
    CHECK(pruned.layers()[4].in_features == 4);

    const ImageBatch batch = random_batch(5, Shape3{1, 6, 6}, 93);
    CHECK(forward(net, batch).data() == forward(pruned, batch).data());
}

TEST_CASE("empty plan is the identity") {
    const Network net = deep_net(40);
    const RemovalPlan plan{{}, 0.1, 0, {}};
    const Network same = prune_network(net, plan);
    const ImageBatch batch = random_batch(3, Shape3{1, 8, 8}, 41);
    CHECK(forward(net, batch).data() == forward(same, batch).data());
}

TEST_CASE("pruning strictly decreases flops and params by the closed form") {
    const Network net = deep_net(50);
    RemovalPlan plan;
    plan.ratio = 0.3;
    plan.victims = {FilterKey{0, 1}, FilterKey{0, 5}, FilterKey{3, 0}};
    plan.requested = 3;
    plan.per_layer_counts[0] = 2;
    plan.per_layer_counts[3] = 1;
    const Network pruned = prune_network(net, plan);

    CHECK(flops_count(pruned).total < flops_count(net).total);

    // Closed form: deleted kernels + biases + rewired inputs.
    // conv0 loses 2 filters: 2*(9*1) weights + 2 bias.
    // conv1 loses its own 1 filter (9*8 + 1) plus input slices: remaining
    // 5 filters x 2 channels x 9, and the dense drops 1 channel block of
    // 16 columns x 3 outputs.
    const std::size_t conv0_del = 2 * 9 + 2;
    const std::size_t conv1_own = 1 * (9 * 8) + 1;
    const std::size_t conv1_rewire = 5 * 2 * 9;
    const std::size_t dense_rewire = 3 * 16;
    const std::size_t expected_delta =
        conv0_del + conv1_own + conv1_rewire + dense_rewire;
    CHECK(parameter_count(net) - parameter_count(pruned) == expected_delta);
}

TEST_CASE("validate_consistency reports corrupted weight sizes") {
    Network net = deep_net(60);
    CHECK(validate_consistency(net).empty());

    net.layers()[3].weights.resize(net.layers()[3].weights.size() - 5);
    const auto diags = validate_consistency(net);
    REQUIRE(!diags.empty());
    CHECK(diags[0].find("layer 3") != std::string::npos);
    CHECK(diags[0].find("expected") != std::string::npos);
    CHECK(diags[0].find("actual") != std::string::npos);
}

TEST_CASE("plan referencing a missing filter fails") {
    const Network net = deep_net(70);
    RemovalPlan plan;
    plan.ratio = 0.1;
    plan.victims = {FilterKey{0, 99}};
    CHECK_THROWS_AS(prune_network(net, plan), SurgeryError);
    plan.victims = {FilterKey{1, 0}};  // relu layer, not a conv
    CHECK_THROWS_AS(prune_network(net, plan), SurgeryError);
}

TEST_CASE("fuzz: random guarded plans keep the network consistent") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Network net = deep_net(80 + seed);
        Rng rng(seed);
        // Random victims respecting the keep-one guard.
        std::map<std::size_t, std::vector<std::size_t>> by_layer;
        for (std::size_t li : conv_layer_indices(net)) {
            const std::size_t n = net.layers()[li].out_channels;
            const std::size_t remove = rng.below(n);  // at most n-1
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), 0);
            for (std::size_t i = 0; i < remove; ++i) {
                std::swap(all[i], all[i + rng.below(n - i)]);
            }
            all.resize(remove);
            std::sort(all.begin(), all.end());
            if (!all.empty()) by_layer[li] = all;
        }
        RemovalPlan plan;
        plan.ratio = 0.5;
        for (const auto& [li, filters] : by_layer) {
            for (std::size_t f : filters) {
                plan.victims.push_back(FilterKey{li, f});
            }
            plan.per_layer_counts[li] = filters.size();
        }
        plan.requested = plan.victims.size();

        const Network pruned = prune_network(net, plan);
        CHECK(validate_consistency(pruned).empty());
        const ImageBatch batch = random_batch(2, Shape3{1, 8, 8}, seed);
        const Matrix probs = forward(pruned, batch);
        for (std::size_t s = 0; s < probs.rows(); ++s) {
            double sum = 0.0;
            for (std::size_t j = 0; j < probs.cols(); ++j) {
                sum += probs(s, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("plan serializes to JSON and back") {
    RemovalPlan plan;
    plan.ratio = 0.25;
    plan.requested = 2;
    plan.victims = {FilterKey{0, 1}, FilterKey{3, 4}};
    plan.per_layer_counts = {{0, 1}, {3, 1}};
    const RemovalPlan back = plan_from_json(plan_to_json(plan));
    CHECK(back.ratio == plan.ratio);
    CHECK(back.requested == plan.requested);
    CHECK(back.victims == plan.victims);
    CHECK(back.per_layer_counts == plan.per_layer_counts);
}
