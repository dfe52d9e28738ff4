#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "ceg/error.hpp"
#include "ceg/explain.hpp"
#include "support.hpp"

using namespace ceg;
using namespace ceg::testing;

namespace {

NodeDecision critical(std::size_t node, double mean_te = -1.0) {
    NodeDecision d;
    d.node = node;
    d.mean_te = mean_te;
    d.p = 0.0;
    d.kind = NodeKind::Critical;
    return d;
}

// Graph with the given critical nodes per layer (index 0 is layer 1).
CausalGraph make_graph(const std::vector<std::vector<NodeDecision>>& per_layer) {
    CausalGraph g;
    for (std::size_t l = 1; l <= per_layer.size(); ++l) {
        GraphLayer gl;
        gl.layer = l;
        gl.evaluated = true;
        gl.critical = per_layer[l - 1];
        g.layers.push_back(gl);
    }
    for (std::size_t l = 1; l < per_layer.size(); ++l) g.layers[l - 1].targets = g.layers[l].critical_nodes();
    return g;
}

// [1, 4, 4] input -> conv 1x1 (c1 channels, weight 1) -> conv 1x1 to one
// channel with weight w2 per input channel -> flatten -> dense to 2 classes.
NetworkSpec pointwise_net(std::size_t c1, float w2) {
    Tensor w1({c1, 1, 1, 1});
    std::fill(w1.data.begin(), w1.data.end(), 1.0f);
    Tensor conv2({1, c1, 1, 1});
    std::fill(conv2.data.begin(), conv2.data.end(), w2);
    Tensor fc({2, 16});
    std::fill(fc.data.begin(), fc.data.end(), 0.1f);
    return NetworkSpec({LayerSpec::conv2d("c1", w1, Tensor({c1}), {1, 1}, {0, 0}),
                        LayerSpec::conv2d("c2", conv2, Tensor({1}), {1, 1}, {0, 0}), LayerSpec::flatten(),
                        LayerSpec::dense("fc", fc, Tensor({2}))},
                       {1, 4, 4}, 2);
}

Tensor filled(Shape s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

// Class 0 logit reads only pixel (0, 0) of a [1, 4, 4] input.
NetworkSpec single_pixel_net(float weight) {
    Tensor fc({2, 16});
    fc.data[0] = weight;
    return NetworkSpec({LayerSpec::flatten(), LayerSpec::dense("fc", fc, Tensor({2}))}, {1, 4, 4}, 2);
}

PeakSet brute_peaks(const SaliencyMap& m) {
    PeakSet out;
    const long H = static_cast<long>(m.height), W = static_cast<long>(m.width);
    for (long r = 0; r < H; ++r) {
        for (long c = 0; c < W; ++c) {
            const float v = m.at(r, c);
            int above = 0, below = 0, n = 0;
            for (long rr = std::max(0L, r - 1); rr <= std::min(H - 1, r + 1); ++rr) {
                for (long cc = std::max(0L, c - 1); cc <= std::min(W - 1, c + 1); ++cc) {
                    if (rr == r && cc == c) continue;
                    ++n;
                    above += m.at(rr, cc) < v;
                    below += m.at(rr, cc) > v;
                }
            }
            if (n > 0 && above == n) out.maxima.push_back({std::size_t(r), std::size_t(c), v});
            if (n > 0 && below == n) out.minima.push_back({std::size_t(r), std::size_t(c), -double(v)});
        }
    }
    return out;
}

}  // namespace

TEST(FilterResponse, ConvChildConstantPlane) {
    const auto net = pointwise_net(1, 2.0f);
    const auto traced = forward_traced(net, filled({1, 1, 4, 4}, 3.0f));
    const Tensor r = filter_response(net, traced.trace, 1, 0, 0);
    ASSERT_EQ(r.shape, (Shape{4, 4}));
    for (float v : r.data) EXPECT_FLOAT_EQ(v, 6.0f);
    const auto g = make_graph({{critical(0)}, {critical(0)}, {critical(0)}});
    const auto m = node_saliency(net, traced.trace, g, 1, 0);
    EXPECT_TRUE(m.degenerate);
    for (float v : m.values) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(m.source, "node layer=2 i=0");
}

TEST(FilterResponse, DenseToDense) {
    const NetworkSpec net({LayerSpec::dense("a", Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})),
                           LayerSpec::dense("b", Tensor({2, 2}, {2, 0, 0, 1}), Tensor({2}))},
                          {2}, 2);
    const auto traced = forward_traced(net, Tensor({1, 2}, {3, 5}));
    const Tensor r = filter_response(net, traced.trace, 1, 0, 0);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_FLOAT_EQ(r.data[0], 6.0f);
    EXPECT_FLOAT_EQ(filter_response(net, traced.trace, 1, 1, 1).data[0], 5.0f);
    EXPECT_FLOAT_EQ(filter_response(net, traced.trace, 1, 1, 0).data[0], 0.0f);
}

TEST(FilterResponse, LenetConvToDenseSpatialShape) {
    const auto net = load_lenet();
    const auto x = take(load_split("test"), 1).images;
    const auto traced = forward_traced(net, x);
    const Tensor r = filter_response(net, traced.trace, 2, 5, 17);
    ASSERT_EQ(r.shape, (Shape{5, 5}));
    const Tensor& a = traced.trace.at(2);
    const Tensor& w = *net.layer(net.graph_layer_index(3)).weight;
    for (std::size_t q = 0; q < 25; ++q) {
        EXPECT_FLOAT_EQ(r.data[q], w.data[17 * 400 + 5 * 25 + q] * a.data[5 * 25 + q]);
    }
    const Tensor r1 = filter_response(net, traced.trace, 1, 2, 3);
    EXPECT_EQ(r1.shape, (Shape{10, 10}));
}

TEST(NodeResponse, IdenticalParentsMatchSingleParent) {
    const auto net = pointwise_net(2, 1.5f);
    std::mt19937_64 gen(4);
    const auto traced = forward_traced(net, random_tensor({1, 1, 4, 4}, gen));
    const auto g = make_graph({{critical(0), critical(1)}, {critical(0)}, {critical(1)}});
    const Tensor both = node_response(net, traced.trace, g, 1, 0);
    const Tensor one = filter_response(net, traced.trace, 1, 0, 0);
    EXPECT_EQ(both, one);
    const auto m = node_saliency(net, traced.trace, g, 1, 0);
    EXPECT_FALSE(m.degenerate);
}

TEST(NodeResponse, Errors) {
    const auto net = pointwise_net(2, 1.0f);
    const auto traced = forward_traced(net, filled({1, 1, 4, 4}, 1.0f));
    const auto no_parents = make_graph({{}, {critical(0)}, {critical(0)}});
    try {
        node_response(net, traced.trace, no_parents, 1, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoParents);
    }
    const auto g = make_graph({{critical(0)}, {}, {critical(0)}});
    try {
        node_response(net, traced.trace, g, 1, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotInGraph);
    }
    try {
        aggregate_saliency(net, filled({1, 4, 4}, 1.0f), g, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoCriticalNodes);
    }
}

TEST(AggregateSaliency, SingleNodeEqualsNodeSaliency) {
    const auto net = load_lenet();
    const auto x = take(load_split("test"), 1).images;
    const auto traced = forward_traced(net, x);
    const auto g = make_graph({{critical(1), critical(4)}, {critical(7)}, {critical(0)}, {critical(0)}, {critical(2)}});
    const Tensor sample({1, 28, 28}, std::vector<float>(x.data.begin(), x.data.end()));
    const auto agg = aggregate_saliency(net, sample, g, 1);
    const auto node = node_saliency(net, traced.trace, g, 1, 7);
    ASSERT_EQ(agg.values.size(), 28u * 28u);
    for (std::size_t q = 0; q < agg.values.size(); ++q) EXPECT_NEAR(agg.values[q], node.values[q], 1e-6);
    EXPECT_EQ(agg.source, "causal aggregate l=1");
}

TEST(AggregateSaliency, RangeAndZeroInput) {
    const auto net = load_lenet();
    const auto g = make_graph({{critical(0), critical(3)}, {critical(2), critical(9)}, {critical(0)}, {critical(0)}, {critical(2)}});
    const auto first = take(load_split("val"), 1).images;
    const auto m = aggregate_saliency(net, Tensor({1, 28, 28}, first.data), g, 1);
    float lo = 1.0f, hi = 0.0f;
    for (float v : m.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    EXPECT_EQ(lo, 0.0f);
    EXPECT_EQ(hi, 1.0f);
    const auto zero = aggregate_saliency(net, Tensor({1, 28, 28}), g, 1);
    for (float v : zero.values) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Normalize, ScaleAndShiftInvariance) {
    std::mt19937_64 gen(8);
    const Tensor p = random_tensor({6, 7}, gen, -2.0f, 3.0f);
    Tensor q = p;
    for (float& v : q.data) v = 4.0f * v + 1.5f;
    const auto a = minmax_normalize(p), b = minmax_normalize(q);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-5);
    const auto c = minmax_normalize(filled({3, 3}, 7.0f));
    EXPECT_TRUE(c.degenerate);
    EXPECT_THROW(minmax_normalize(Tensor({9})), Error);
}

TEST(Upsample, KnownValues) {
    const Tensor p({2, 2}, {0, 1, 2, 3});
    const Tensor u = upsample_bilinear(p, 4, 4);
    const float want[16] = {0, 0.25f, 0.75f, 1, 0.5f, 0.75f, 1.25f, 1.5f, 1.5f, 1.75f, 2.25f, 2.5f, 2, 2.25f, 2.75f, 3};
    for (std::size_t q = 0; q < 16; ++q) EXPECT_NEAR(u.data[q], want[q], 1e-6) << q;
    EXPECT_EQ(upsample_bilinear(p, 2, 2), p);
    for (float v : upsample_bilinear(filled({3, 5}, 2.5f), 7, 9).data) EXPECT_FLOAT_EQ(v, 2.5f);
}

TEST(Peaks, MatchBruteForce) {
    std::mt19937_64 gen(12);
    std::uniform_int_distribution<int> level(0, 4);
    for (int trial = 0; trial < 30; ++trial) {
        SaliencyMap m;
        m.height = m.width = 16;
        m.values.resize(256);
        for (float& v : m.values) v = trial % 2 ? level(gen) / 4.0f : std::uniform_real_distribution<float>(0, 1)(gen);
        const auto got = find_peaks(m);
        auto want = brute_peaks(m);
        auto key = [](const Peak& p) { return std::make_tuple(p.row, p.col); };
        auto sort_pos = [&](std::vector<Peak> v) {
            std::sort(v.begin(), v.end(), [&](const Peak& a, const Peak& b) { return key(a) < key(b); });
            return v;
        };
        EXPECT_EQ(sort_pos(got.maxima), sort_pos(want.maxima));
        EXPECT_EQ(sort_pos(got.minima), sort_pos(want.minima));
        EXPECT_TRUE(std::is_sorted(got.maxima.begin(), got.maxima.end(),
                                   [](const Peak& a, const Peak& b) { return a.score > b.score; }));
        const auto top = std::max_element(m.values.begin(), m.values.end());
        const auto pos = static_cast<std::size_t>(top - m.values.begin());
        EXPECT_EQ(got.absolute_max.row, pos / 16);
        EXPECT_EQ(got.absolute_max.col, pos % 16);
    }
}

TEST(Peaks, ConstantPlaneHasNone) {
    const auto m = minmax_normalize(filled({5, 5}, 1.0f));
    const auto p = find_peaks(m);
    EXPECT_TRUE(p.maxima.empty());
    EXPECT_TRUE(p.minima.empty());
    EXPECT_EQ(p.absolute_max, (Peak{0, 0, 0.0}));
    const auto j = peaks_to_json(p);
    EXPECT_EQ(j["absolute_max"]["row"], 0);
    EXPECT_TRUE(j["maxima"].empty());
}

TEST(Top1Filter, PicksLargestAbsoluteEffect) {
    const auto net = pointwise_net(2, 1.0f);
    std::mt19937_64 gen(1);
    const Tensor x = random_tensor({1, 4, 4}, gen);
    const auto g = make_graph({{critical(0, -0.2), critical(1, -0.9)}, {critical(0)}, {critical(0)}});
    const auto out = top1_filter_response(net, x, g, 1);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].parent, 1u);
    EXPECT_EQ(out[0].child, 0u);
    const auto tie = make_graph({{critical(0, -0.5), critical(1, 0.5)}, {critical(0)}, {critical(0)}});
    EXPECT_EQ(top1_filter_response(net, x, tie, 1)[0].parent, 0u);
}

TEST(Occlusion, SinglePixelNet) {
    const auto net = single_pixel_net(1.0f);
    const Tensor x = filled({1, 4, 4}, 1.0f);
    const auto m = occlusion_baseline(net, x, 0, 2, 2);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(m.at(r, c), (r < 2 && c < 2) ? 1.0f : 0.0f);
    }
    const auto pixel = occlusion_baseline(net, x, 0, 1, 1);
    EXPECT_EQ(find_peaks(pixel).absolute_max, (Peak{0, 0, 1.0}));
    EXPECT_EQ(pixel.at(0, 0), 1.0f);
    EXPECT_EQ(pixel.at(0, 1), 0.0f);
}

TEST(Occlusion, ConstantNetAndWholeImagePatch) {
    const Tensor x = filled({1, 4, 4}, 1.0f);
    EXPECT_TRUE(occlusion_baseline(single_pixel_net(0.0f), x, 0, 2, 1).degenerate);
    EXPECT_TRUE(occlusion_baseline(single_pixel_net(1.0f), x, 0, 4, 4).degenerate);
    EXPECT_THROW(occlusion_baseline(single_pixel_net(1.0f), x, 0, 5, 1), Error);
    EXPECT_THROW(occlusion_baseline(single_pixel_net(1.0f), x, 2, 2, 1), Error);
    EXPECT_THROW(occlusion_baseline(single_pixel_net(1.0f), Tensor({1, 3, 4}), 0, 2, 1), Error);
}

TEST(Occlusion, OverlappingPatchesAverage) {
    // stride 1, patch 2: pixel (0,0) is covered by one patch, (1,1) by four
    // of which one contains (0,0).
    const auto m = occlusion_baseline(single_pixel_net(2.0f), filled({1, 4, 4}, 1.0f), 0, 2, 1);
    EXPECT_EQ(m.at(0, 0), 1.0f);
    EXPECT_NEAR(m.at(1, 1), 0.25f, 1e-6);
    EXPECT_NEAR(m.at(0, 1), 0.5f, 1e-6);
    EXPECT_EQ(m.at(3, 3), 0.0f);
}

TEST(DefaultLayer, Selection) {
    EXPECT_EQ(default_explain_layer(load_lenet()), 1u);
    EXPECT_EQ(default_explain_layer(pointwise_net(1, 1.0f)), 1u);
    const NetworkSpec dense({LayerSpec::dense("a", Tensor({2, 2})), LayerSpec::dense("b", Tensor({2, 2})),
                             LayerSpec::dense("c", Tensor({2, 2}))},
                            {2}, 2);
    EXPECT_EQ(default_explain_layer(dense), 2u);
    EXPECT_THROW(default_explain_layer(single_pixel_net(1.0f)), Error);
}

TEST(Output, CsvAndPgm) {
    const auto m = minmax_normalize(Tensor({2, 3}, {0, 1, 2, 3, 4, 5}));
    EXPECT_EQ(saliency_csv(m), "0.000000,0.200000,0.400000\n0.600000,0.800000,1.000000\n");
    const auto dir = scratch_dir("explain_pgm");
    write_pgm16(m, dir / "m.pgm", {"meta {\"a\":1}"});
    std::ifstream in(dir / "m.pgm", std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    const std::string header = "P5\n# meta {\"a\":1}\n3 2\n65535\n";
    ASSERT_EQ(bytes.size(), header.size() + 12);
    EXPECT_EQ(bytes.substr(0, header.size()), header);
    auto sample = [&](std::size_t q) {
        return (static_cast<unsigned char>(bytes[header.size() + 2 * q]) << 8) |
               static_cast<unsigned char>(bytes[header.size() + 2 * q + 1]);
    };
    EXPECT_EQ(sample(0), 0);
    EXPECT_EQ(sample(1), 13107);
    EXPECT_EQ(sample(5), 65535);
}
