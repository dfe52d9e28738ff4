#include <gtest/gtest.h>

#include <random>

#include "ceg/error.hpp"
#include "ceg/intervention.hpp"
#include "support.hpp"

using namespace ceg;
using namespace ceg::testing;

namespace {

ErrorCode group_error(const NetworkSpec& net, std::size_t l, std::size_t j, std::vector<std::size_t> t) {
    try {
        make_path_group(net, l, j, std::move(t));
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected failure";
    return ErrorCode::Invariant;
}

}  // namespace

TEST(PathGroups, LenetCounts) {
    const auto net = load_lenet();
    const auto fc2 = enumerate_path_groups(net, 4, {3});
    EXPECT_EQ(fc2.size(), 84u);
    for (std::size_t j = 0; j < fc2.size(); ++j) {
        EXPECT_EQ(fc2[j].parent_node, j);
        EXPECT_EQ(fc2[j].targets, (std::vector<std::size_t>{3}));
    }
    EXPECT_EQ(enumerate_path_groups(net, 1, {0, 1}).size(), 6u);
    EXPECT_TRUE(enumerate_path_groups(net, 2, {0}).front().crossing_flatten);
    EXPECT_FALSE(enumerate_path_groups(net, 1, {0}).front().crossing_flatten);
}

TEST(PathGroups, ValidationErrors) {
    const auto net = load_lenet();
    EXPECT_EQ(group_error(net, 1, 0, {}), ErrorCode::InvalidGroup);
    EXPECT_EQ(group_error(net, 1, 6, {0}), ErrorCode::InvalidGroup);
    EXPECT_EQ(group_error(net, 1, 0, {16}), ErrorCode::InvalidGroup);
    EXPECT_EQ(group_error(net, 4, 0, {10}), ErrorCode::InvalidGroup);
    EXPECT_EQ(group_error(net, 0, 0, {0}), ErrorCode::InvalidLayer);
    EXPECT_EQ(group_error(net, 5, 0, {0}), ErrorCode::InvalidLayer);
    EXPECT_THROW(enumerate_path_groups(net, 5, {0}), Error);
}

TEST(PathGroups, TargetsNormalized) {
    const auto net = load_lenet();
    EXPECT_EQ(make_path_group(net, 3, 1, {5, 2, 5, 0}).targets, (std::vector<std::size_t>{0, 2, 5}));
}

TEST(SampleBeta, BinaryIsZero) {
    Rng rng(1);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_beta(InterventionPolicy::binary(), rng).beta, 0.0);
}

TEST(SampleBeta, ContinuousRange) {
    const auto p = InterventionPolicy::continuous(0.25, 0.01);
    Rng rng(99);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double b = sample_beta(p, rng).beta;
        lo = std::min(lo, b);
        hi = std::max(hi, b);
    }
    EXPECT_GE(lo, 0.24);
    EXPECT_LE(hi, 0.26);
    EXPECT_LT(lo, 0.241);
    EXPECT_GT(hi, 0.259);
}

TEST(SampleBeta, SeededReproducible) {
    const auto p = InterventionPolicy::continuous(0.5);
    Rng a = Rng::stream(7, path_group_stream(2, 3));
    Rng b = Rng::stream(7, path_group_stream(2, 3));
    const double a1 = sample_beta(p, a).beta, a2 = sample_beta(p, a).beta;
    EXPECT_EQ(a1, sample_beta(p, b).beta);
    EXPECT_EQ(a2, sample_beta(p, b).beta);
    EXPECT_NE(a1, a2);
    Rng c = Rng::stream(7, path_group_stream(2, 4));
    EXPECT_NE(a1, sample_beta(p, c).beta);
}

TEST(SampleBeta, PolicyValidation) {
    EXPECT_THROW(InterventionPolicy::continuous(0.005, 0.01), Error);
    EXPECT_THROW(InterventionPolicy::continuous(1.0, 0.01), Error);
    EXPECT_THROW(InterventionPolicy::continuous(0.5, 0.0), Error);
    EXPECT_NO_THROW(InterventionPolicy::continuous(0.02, 0.01));
}

TEST(RngTest, UniformAndNormal) {
    Rng rng(3);
    double s = 0.0, ss = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double z = rng.normal(0.0, 2.0);
        s += z;
        ss += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.1);
    EXPECT_NEAR(ss / n, 4.0, 0.2);
}

TEST(Apply, HandNetZeroesOneEntry) {
    const auto net = identity_222();
    const auto view = apply(net, make_path_group(net, 1, 0, {0}), 0.0);
    EXPECT_EQ(view.weight(1), Tensor({2, 2}, {0, 0, 0, 1}));
    EXPECT_EQ(*net.layer(1).weight, Tensor({2, 2}, {1, 0, 0, 1}));
    EXPECT_EQ(view.weight(0), *net.layer(0).weight);
    EXPECT_EQ(view.override_count(), 1u);
}

TEST(Apply, BetaOneIsNoOp) {
    const auto net = load_lenet();
    const auto x = take(load_split("test"), 8).images;
    const auto base = forward(net, x);
    for (std::size_t l = 1; l < 5; ++l) {
        const auto view = apply(net, make_path_group(net, l, 0, {0, 1}), 1.0);
        EXPECT_EQ(forward(view, x), base) << l;
    }
}

TEST(Apply, ConvGroupZeroesKernelSlices) {
    const auto net = load_lenet();
    const std::vector<std::size_t> targets{1, 4, 9};
    const auto group = make_path_group(net, 1, 2, targets);
    const auto view = apply(net, group, 0.0);
    const std::size_t conv2 = net.graph_layer_index(2);
    const Tensor& before = *net.layer(conv2).weight;
    const Tensor& after = view.weight(conv2);
    std::size_t changed = 0;
    for (std::size_t q = 0; q < before.size(); ++q) {
        if (before.data[q] != after.data[q]) {
            ++changed;
            EXPECT_EQ(after.data[q], 0.0f);
            const std::size_t t = q / (6 * 25), j = (q / 25) % 6;
            EXPECT_EQ(j, 2u);
            EXPECT_TRUE(std::find(targets.begin(), targets.end(), t) != targets.end());
        }
    }
    EXPECT_EQ(changed, 5u * 5u * targets.size());
    EXPECT_EQ(path_group_weight_count(net, group), 5u * 5u * targets.size());
    EXPECT_EQ(*view.base().layer(conv2).bias, *net.layer(conv2).bias);
}

TEST(Apply, FlattenCrossingScalesColumnRange) {
    const auto net = load_lenet();
    const auto group = make_path_group(net, 2, 3, {7, 50});
    const auto view = apply(net, group, 0.5);
    const std::size_t fc1 = net.graph_layer_index(3);
    const Tensor& before = *net.layer(fc1).weight;
    const Tensor& after = view.weight(fc1);
    for (std::size_t r = 0; r < 120; ++r) {
        for (std::size_t c = 0; c < 400; ++c) {
            const float b = before.data[r * 400 + c], a = after.data[r * 400 + c];
            const bool in_group = (r == 7 || r == 50) && c >= 75 && c < 100;
            EXPECT_EQ(a, in_group ? static_cast<float>(b * 0.5) : b) << r << "," << c;
        }
    }
    EXPECT_EQ(path_group_weight_count(net, group), 2u * 25u);
}

TEST(Apply, NonDestructive) {
    const auto net = load_lenet();
    const auto x = take(load_split("val"), 16).images;
    const auto snapshot = forward(net, x);
    const auto weights = *net.layer(net.graph_layer_index(3)).weight;
    {
        auto view = apply(net, make_path_group(net, 2, 0, {0, 1, 2}), 0.0);
        view = apply(view, make_path_group(net, 3, 5, {1}), 0.0);
        EXPECT_NE(forward(view, x), snapshot);
    }
    EXPECT_EQ(forward(net, x), snapshot);
    EXPECT_EQ(*net.layer(net.graph_layer_index(3)).weight, weights);
}

TEST(Apply, ApplyAllMatchesSequential) {
    const auto net = load_lenet();
    std::vector<PathGroup> groups{make_path_group(net, 1, 0, {2, 3}), make_path_group(net, 1, 4, {0}),
                                  make_path_group(net, 3, 10, {5, 6}), make_path_group(net, 4, 2, {3})};
    NetworkView seq = net;
    for (const auto& g : groups) seq = apply(seq, g, 0.0);
    const auto all = apply_all(net, groups, 0.0);
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        if (net.layer(i).weight) {
            EXPECT_EQ(seq.weight(i), all.weight(i)) << i;
        }
    }
    EXPECT_EQ(all.override_count(), 3u);
}

TEST(Apply, LinearityInBeta) {
    // Linear single-path network: the logit moves linearly with (beta - 1).
    const NetworkSpec net({LayerSpec::dense("fc1", Tensor({2, 2}, {0.7f, -0.3f, 0.2f, 0.9f}), Tensor({2}, {0.1f, 0.0f})),
                           LayerSpec::dense("fc2", Tensor({2, 2}, {1.5f, 0.4f, -0.8f, 0.6f}), Tensor({2}, {0.0f, 0.2f}))},
                          {2}, 2);
    const Tensor x({1, 2}, {1.25f, -0.5f});
    const double base = forward(net, x).data[0];
    const auto group = make_path_group(net, 1, 0, {0});
    std::vector<double> deltas;
    for (double beta : {0.0, 0.25, 0.5, 2.0}) deltas.push_back(forward(apply(net, group, beta), x).data[0] - base);
    const double slope = deltas[0] / (0.0 - 1.0);
    EXPECT_NEAR(deltas[1], slope * (0.25 - 1.0), 1e-5);
    EXPECT_NEAR(deltas[2], slope * (0.5 - 1.0), 1e-5);
    EXPECT_NEAR(deltas[3], slope * (2.0 - 1.0), 1e-5);
}

TEST(Apply, ViewRejectsWrongShape) {
    const auto net = identity_222();
    const NetworkView view = net;
    EXPECT_THROW(view.with_weight(0, Tensor({3, 2})), Error);
}
