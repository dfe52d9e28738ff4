#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ceg {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float32 tensor. Image batches are N x C x H x W.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<float> values);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor filled(Shape s, float value);

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    std::span<float> values() noexcept { return data; }
    std::span<const float> values() const noexcept { return data; }

    // Row i of the leading dimension, as a span over the remaining dims.
    std::span<const float> row(std::size_t i) const;
    std::span<float> row(std::size_t i);

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Stacks equally-shaped samples into a batch with a new leading dimension.
Tensor stack(std::span<const Tensor> samples);

// Copies sample i of a batch out as a tensor without the leading dimension.
Tensor slice_sample(const Tensor& batch, std::size_t i);

}  // namespace ceg
