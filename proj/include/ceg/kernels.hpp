#pragma once

#include <cstddef>
#include <span>

// Layer kernels over N-batched, row-major float buffers. Dot products
// accumulate in double and round once to float on store.
//
// ceg::kernels::reference holds the plain serial loops; the functions in
// ceg::kernels are the OpenMP versions used by the engine. Both visit each
// output's terms in the same order, so their results are bit-identical
// regardless of thread count.

namespace ceg::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_c = 1, in_h = 1, in_w = 1;
    std::size_t out_c = 1, k_h = 1, k_w = 1;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_h = 0, pad_w = 0;

    std::size_t out_h() const { return (in_h + 2 * pad_h - k_h) / stride_h + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad_w - k_w) / stride_w + 1; }
};

struct PoolGeometry {
    std::size_t batch = 1;
    std::size_t channels = 1, in_h = 1, in_w = 1;
    std::size_t k_h = 1, k_w = 1;
    std::size_t stride_h = 1, stride_w = 1;

    std::size_t out_h() const { return (in_h - k_h) / stride_h + 1; }
    std::size_t out_w() const { return (in_w - k_w) / stride_w + 1; }
};

// bias may be empty.
void conv2d(const ConvGeometry& g, std::span<const float> in, std::span<const float> weight,
            std::span<const float> bias, std::span<float> out);
void dense(std::size_t batch, std::size_t n_in, std::size_t n_out, std::span<const float> in,
           std::span<const float> weight, std::span<const float> bias, std::span<float> out);
void maxpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out);
void avgpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out);
void relu(std::span<float> data);

namespace reference {

void conv2d(const ConvGeometry& g, std::span<const float> in, std::span<const float> weight,
            std::span<const float> bias, std::span<float> out);
void dense(std::size_t batch, std::size_t n_in, std::size_t n_out, std::span<const float> in,
           std::span<const float> weight, std::span<const float> bias, std::span<float> out);
void maxpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out);
void avgpool2d(const PoolGeometry& g, std::span<const float> in, std::span<float> out);
void relu(std::span<float> data);

}  // namespace reference

}  // namespace ceg::kernels
