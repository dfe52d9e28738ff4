#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ceg/tensor.hpp"

namespace ceg {

enum class LayerKind { Dense, Conv2d, Relu, MaxPool2d, AvgPool2d, Flatten };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

using Pair = std::array<std::size_t, 2>;

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Relu;
    std::optional<Tensor> weight;
    std::optional<Tensor> bias;
    Pair stride{1, 1};
    Pair padding{0, 0};
    Pair kernel{1, 1};

    bool parameterized() const noexcept {
        return kind == LayerKind::Dense || kind == LayerKind::Conv2d;
    }

    static LayerSpec dense(std::string name, Tensor weight, std::optional<Tensor> bias = {});
    static LayerSpec conv2d(std::string name, Tensor weight, std::optional<Tensor> bias = {},
                            Pair stride = {1, 1}, Pair padding = {0, 0});
    static LayerSpec relu(std::string name = "relu");
    static LayerSpec maxpool2d(std::string name, Pair kernel, Pair stride);
    static LayerSpec avgpool2d(std::string name, Pair kernel, Pair stride);
    static LayerSpec flatten(std::string name = "flatten");
};

struct Preprocess {
    double divide = 255.0;
    std::vector<double> mean;  // empty, or one value per input channel
    std::vector<double> std;
};

// Output shape of a single layer for a per-sample input shape (no batch dim).
// Dense layers accept any input whose element count matches n_in.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in_shape);

// Immutable, validated feed-forward network. The parameterized layers, in
// order, are the graph layers l = 1..L; graph layer L produces the logits.
class NetworkSpec {
public:
    NetworkSpec(std::vector<LayerSpec> layers, Shape input_shape, std::size_t num_classes,
                std::optional<Preprocess> preprocess = std::nullopt);

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    const std::optional<Preprocess>& preprocess() const noexcept { return preprocess_; }

    // Per-sample shape entering / leaving layer i.
    const Shape& layer_input_shape(std::size_t i) const { return in_shapes_.at(i); }
    const Shape& layer_output_shape(std::size_t i) const { return in_shapes_.at(i + 1); }

    std::size_t graph_layer_count() const noexcept { return param_layers_.size(); }
    // Index into layers() of graph layer l (1-based).
    std::size_t graph_layer_index(std::size_t l) const;
    // Last index into layers() whose output belongs to graph layer l's
    // activation (the parameterized layer plus trailing transparent layers).
    std::size_t graph_layer_end(std::size_t l) const;
    const LayerSpec& graph_layer(std::size_t l) const { return layers_[graph_layer_index(l)]; }
    // Per-sample shape of the traced activation a^l. l = 0 is the input.
    const Shape& activation_shape(std::size_t l) const;
    // Nodes of graph layer l: output units (dense) or output channels (conv).
    std::size_t node_count(std::size_t l) const;

private:
    std::vector<LayerSpec> layers_;
    Shape input_shape_;
    std::size_t num_classes_;
    std::optional<Preprocess> preprocess_;

    std::vector<Shape> in_shapes_;
    std::vector<std::size_t> param_layers_;
    std::vector<Shape> activation_shapes_;
};

}  // namespace ceg
