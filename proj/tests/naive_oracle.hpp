#pragma once

// Straight-line reference implementations that share no code with the
// engine: forward passes in double precision over plain vectors, and a
// path-group weight edit written directly from the indexing rules.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

#include "ceg/network.hpp"

namespace ceg::testing {

struct NaiveLayer {
    LayerKind kind;
    std::vector<double> w, b;
    std::vector<std::size_t> wshape;
    std::size_t stride_h = 1, stride_w = 1, pad_h = 0, pad_w = 0, k_h = 1, k_w = 1;
};

inline std::vector<NaiveLayer> naive_layers(const NetworkSpec& net) {
    std::vector<NaiveLayer> out;
    for (const auto& l : net.layers()) {
        NaiveLayer n{l.kind, {}, {}, {}};
        if (l.weight) {
            n.w.assign(l.weight->data.begin(), l.weight->data.end());
            n.wshape = l.weight->shape;
        }
        if (l.bias) n.b.assign(l.bias->data.begin(), l.bias->data.end());
        n.stride_h = l.stride[0];
        n.stride_w = l.stride[1];
        n.pad_h = l.padding[0];
        n.pad_w = l.padding[1];
        n.k_h = l.kernel[0];
        n.k_w = l.kernel[1];
        out.push_back(std::move(n));
    }
    return out;
}

// x is one sample; shape is {C, H, W} or {n} while tracked as (c, h, w).
inline std::vector<double> naive_forward(const std::vector<NaiveLayer>& layers, std::vector<double> x, std::size_t c,
                                         std::size_t h, std::size_t w) {
    for (const auto& L : layers) {
        switch (L.kind) {
            case LayerKind::Dense: {
                const std::size_t n_out = L.wshape[0], n_in = L.wshape[1];
                std::vector<double> y(n_out, 0.0);
                for (std::size_t o = 0; o < n_out; ++o) {
                    double s = L.b.empty() ? 0.0 : L.b[o];
                    for (std::size_t i = 0; i < n_in; ++i) s += L.w[o * n_in + i] * x[i];
                    y[o] = s;
                }
                x = y;
                c = n_out;
                h = w = 1;
                break;
            }
            case LayerKind::Conv2d: {
                const std::size_t co = L.wshape[0], ci = L.wshape[1], kh = L.wshape[2], kw = L.wshape[3];
                const std::size_t oh = (h + 2 * L.pad_h - kh) / L.stride_h + 1;
                const std::size_t ow = (w + 2 * L.pad_w - kw) / L.stride_w + 1;
                std::vector<double> y(co * oh * ow, 0.0);
                for (std::size_t o = 0; o < co; ++o) {
                    for (std::size_t r = 0; r < oh; ++r) {
                        for (std::size_t q = 0; q < ow; ++q) {
                            double s = L.b.empty() ? 0.0 : L.b[o];
                            for (std::size_t i = 0; i < ci; ++i) {
                                for (std::size_t a = 0; a < kh; ++a) {
                                    for (std::size_t bb = 0; bb < kw; ++bb) {
                                        const long rr = static_cast<long>(r * L.stride_h + a) - static_cast<long>(L.pad_h);
                                        const long cc = static_cast<long>(q * L.stride_w + bb) - static_cast<long>(L.pad_w);
                                        if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                                        s += L.w[((o * ci + i) * kh + a) * kw + bb] *
                                             x[(i * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc)];
                                    }
                                }
                            }
                            y[(o * oh + r) * ow + q] = s;
                        }
                    }
                }
                x = y;
                c = co;
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::Relu:
                for (double& v : x) v = v > 0.0 ? v : 0.0;
                break;
            case LayerKind::MaxPool2d:
            case LayerKind::AvgPool2d: {
                const std::size_t oh = (h - L.k_h) / L.stride_h + 1, ow = (w - L.k_w) / L.stride_w + 1;
                std::vector<double> y(c * oh * ow);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    for (std::size_t r = 0; r < oh; ++r) {
                        for (std::size_t q = 0; q < ow; ++q) {
                            double m = -std::numeric_limits<double>::infinity(), s = 0.0;
                            for (std::size_t a = 0; a < L.k_h; ++a) {
                                for (std::size_t bb = 0; bb < L.k_w; ++bb) {
                                    const double v = x[(ch * h + r * L.stride_h + a) * w + q * L.stride_w + bb];
                                    m = std::max(m, v);
                                    s += v;
                                }
                            }
                            y[(ch * oh + r) * ow + q] =
                                L.kind == LayerKind::MaxPool2d ? m : s / static_cast<double>(L.k_h * L.k_w);
                        }
                    }
                }
                x = y;
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::Flatten:
                c = c * h * w;
                h = w = 1;
                break;
        }
    }
    return x;
}

inline std::vector<double> naive_forward(const NetworkSpec& net, const std::vector<double>& x) {
    const auto& s = net.input_shape();
    if (s.size() == 3) return naive_forward(naive_layers(net), x, s[0], s[1], s[2]);
    return naive_forward(naive_layers(net), x, numel(s), 1, 1);
}

// Scale the weights from parent j of graph layer l to the targets by beta.
inline std::vector<NaiveLayer> naive_intervene(const NetworkSpec& net, std::size_t l, std::size_t j,
                                               const std::vector<std::size_t>& targets, double beta) {
    auto layers = naive_layers(net);
    std::size_t seen = 0, child = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::Dense || layers[i].kind == LayerKind::Conv2d) {
            if (++seen == l + 1) {
                child = i;
                break;
            }
        }
    }
    auto& C = layers[child];
    if (C.kind == LayerKind::Conv2d) {
        const std::size_t ci = C.wshape[1], kk = C.wshape[2] * C.wshape[3];
        for (std::size_t t : targets) {
            for (std::size_t q = 0; q < kk; ++q) C.w[(t * ci + j) * kk + q] *= beta;
        }
    } else {
        const std::size_t n_in = C.wshape[1];
        const std::size_t parents = net.node_count(l);
        const std::size_t span = n_in / parents;
        for (std::size_t t : targets) {
            for (std::size_t q = j * span; q < (j + 1) * span; ++q) C.w[t * n_in + q] *= beta;
        }
    }
    return layers;
}

inline std::vector<double> sample_vector(const Tensor& batch, std::size_t i) {
    const auto r = batch.row(i);
    return {r.begin(), r.end()};
}

}  // namespace ceg::testing
