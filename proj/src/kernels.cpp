#include "ceg/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

namespace ceg::kernels {

namespace {

// One conv output element. Shared by both variants so the summation order
// cannot drift between them.
inline float conv_point(const ConvGeometry& g, const float* in_n, const float* w_co, double acc,
                        std::size_t oh, std::size_t ow) {
    const auto ih0 = static_cast<std::ptrdiff_t>(oh * g.stride_h) - static_cast<std::ptrdiff_t>(g.pad_h);
    const auto iw0 = static_cast<std::ptrdiff_t>(ow * g.stride_w) - static_cast<std::ptrdiff_t>(g.pad_w);
    const auto ih_max = static_cast<std::ptrdiff_t>(g.in_h);
    const auto iw_max = static_cast<std::ptrdiff_t>(g.in_w);
    for (std::size_t ci = 0; ci < g.in_c; ++ci) {
        const float* plane = in_n + ci * g.in_h * g.in_w;
        const float* kern = w_co + ci * g.k_h * g.k_w;
        for (std::size_t kh = 0; kh < g.k_h; ++kh) {
            const auto ih = ih0 + static_cast<std::ptrdiff_t>(kh);
            if (ih < 0 || ih >= ih_max) continue;
            const float* in_row = plane + ih * iw_max;
            const float* k_row = kern + kh * g.k_w;
            for (std::size_t kw = 0; kw < g.k_w; ++kw) {
                const auto iw = iw0 + static_cast<std::ptrdiff_t>(kw);
                if (iw < 0 || iw >= iw_max) continue;
                acc += static_cast<double>(in_row[iw]) * static_cast<double>(k_row[kw]);
            }
        }
    }
    return static_cast<float>(acc);
}

inline void conv_channel(const ConvGeometry& g, std::size_t n, std::size_t co,
                         std::span<const float> in, std::span<const float> weight,
                         std::span<const float> bias, std::span<float> out) {
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    const float* in_n = in.data() + n * g.in_c * g.in_h * g.in_w;
    const float* w_co = weight.data() + co * g.in_c * g.k_h * g.k_w;
    float* dst = out.data() + (n * g.out_c + co) * oh_n * ow_n;
    const double b = bias.empty() ? 0.0 : static_cast<double>(bias[co]);
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
            dst[oh * ow_n + ow] = conv_point(g, in_n, w_co, b, oh, ow);
        }
    }
}

inline float dense_point(std::size_t n_in, const float* x, const float* w_row, double acc) {
    for (std::size_t i = 0; i < n_in; ++i) {
        acc += static_cast<double>(x[i]) * static_cast<double>(w_row[i]);
    }
    return static_cast<float>(acc);
}

template <bool Max>
inline void pool_channel(const PoolGeometry& g, std::size_t plane_index, std::span<const float> in,
                         std::span<float> out) {
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    const float* src = in.data() + plane_index * g.in_h * g.in_w;
    float* dst = out.data() + plane_index * oh_n * ow_n;
    const double inv_area = 1.0 / static_cast<double>(g.k_h * g.k_w);
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
            float best = -std::numeric_limits<float>::infinity();
            double sum = 0.0;
            for (std::size_t kh = 0; kh < g.k_h; ++kh) {
                const float* row = src + (oh * g.stride_h + kh) * g.in_w + ow * g.stride_w;
                for (std::size_t kw = 0; kw < g.k_w; ++kw) {
                    if constexpr (Max) {
                        best = std::max(best, row[kw]);
                    } else {
                        sum += row[kw];
                    }
                }
            }
            dst[oh * ow_n + ow] = Max ? best : static_cast<float>(sum * inv_area);
        }
    }
}

}  // namespace

namespace reference {

void conv2d(const ConvGeometry& g, std::span<const float> in, std::span<const float> weight,
            std::span<const float> bias, std::span<float> out) {
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t co = 0; co < g.out_c; ++co) conv_channel(g, n, co, in, weight, bias, out);
    }
}

void dense(std::size_t batch, std::size_t n_in, std::size_t n_out, std::span<const float> in,
           std::span<const float> weight, std::span<const float> bias, std::span<float> out) {
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < n_out; ++o) {
            const double b = bias.empty() ? 0.0 : static_cast<double>(bias[o]);
            out[n * n_out + o] = dense_point(n_in, in.data() + n * n_in, weight.data() + o * n_in, b);
        }
    }
}

void maxpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out) {
    for (std::size_t p = 0; p < g.batch * g.channels; ++p) pool_channel<true>(g, p, in, out);
}

void avgpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out) {
    for (std::size_t p = 0; p < g.batch * g.channels; ++p) pool_channel<false>(g, p, in, out);
}

void relu(std::span<float> data) {
    for (float& v : data) v = v > 0.0f ? v : 0.0f;
}

}  // namespace reference

void conv2d(const ConvGeometry& g, std::span<const float> in, std::span<const float> weight,
            std::span<const float> bias, std::span<float> out) {
    const auto total = static_cast<std::int64_t>(g.batch * g.out_c);
#pragma omp parallel for schedule(static) if (total > 1)
    for (std::int64_t idx = 0; idx < total; ++idx) {
        const auto n = static_cast<std::size_t>(idx) / g.out_c;
        const auto co = static_cast<std::size_t>(idx) % g.out_c;
        conv_channel(g, n, co, in, weight, bias, out);
    }
}

void dense(std::size_t batch, std::size_t n_in, std::size_t n_out, std::span<const float> in,
           std::span<const float> weight, std::span<const float> bias, std::span<float> out) {
    const auto total = static_cast<std::int64_t>(batch * n_out);
#pragma omp parallel for schedule(static) if (total * static_cast<std::int64_t>(n_in) > 32768)
    for (std::int64_t idx = 0; idx < total; ++idx) {
        const auto n = static_cast<std::size_t>(idx) / n_out;
        const auto o = static_cast<std::size_t>(idx) % n_out;
        const double b = bias.empty() ? 0.0 : static_cast<double>(bias[o]);
        out[n * n_out + o] = dense_point(n_in, in.data() + n * n_in, weight.data() + o * n_in, b);
    }
}

void maxpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out) {
    const auto total = static_cast<std::int64_t>(g.batch * g.channels);
#pragma omp parallel for schedule(static) if (total > 16)
    for (std::int64_t p = 0; p < total; ++p) pool_channel<true>(g, static_cast<std::size_t>(p), in, out);
}

void avgpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out) {
    const auto total = static_cast<std::int64_t>(g.batch * g.channels);
#pragma omp parallel for schedule(static) if (total > 16)
    for (std::int64_t p = 0; p < total; ++p) pool_channel<false>(g, static_cast<std::size_t>(p), in, out);
}

void relu(std::span<float> data) {
    const auto total = static_cast<std::int64_t>(data.size());
#pragma omp parallel for schedule(static) if (total > 65536)
    for (std::int64_t i = 0; i < total; ++i) {
        float& v = data[static_cast<std::size_t>(i)];
        v = v > 0.0f ? v : 0.0f;
    }
}

}  // namespace ceg::kernels
