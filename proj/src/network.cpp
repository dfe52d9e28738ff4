#include "ceg/network.hpp"

#include "ceg/error.hpp"

namespace ceg {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::AvgPool2d: return "avgpool2d";
        case LayerKind::Flatten: return "flatten";
    }
    return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
    for (auto kind : {LayerKind::Dense, LayerKind::Conv2d, LayerKind::Relu, LayerKind::MaxPool2d,
                      LayerKind::AvgPool2d, LayerKind::Flatten}) {
        if (to_string(kind) == name) return kind;
    }
    throw Error(ErrorCode::MalformedHeader, "unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::string name, Tensor weight, std::optional<Tensor> bias) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Dense;
    s.weight = std::move(weight);
    s.bias = std::move(bias);
    return s;
}

LayerSpec LayerSpec::conv2d(std::string name, Tensor weight, std::optional<Tensor> bias,
                            Pair stride, Pair padding) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Conv2d;
    s.weight = std::move(weight);
    s.bias = std::move(bias);
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::relu(std::string name) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec LayerSpec::maxpool2d(std::string name, Pair kernel, Pair stride) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::MaxPool2d;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::avgpool2d(std::string name, Pair kernel, Pair stride) {
    LayerSpec s = maxpool2d(std::move(name), kernel, stride);
    s.kind = LayerKind::AvgPool2d;
    return s;
}

LayerSpec LayerSpec::flatten(std::string name) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Flatten;
    return s;
}

namespace {

[[noreturn]] void mismatch(const LayerSpec& spec, const Shape& in, const std::string& why) {
    throw Error(ErrorCode::ShapeMismatch, "layer '" + spec.name + "' (" +
                                              std::string(to_string(spec.kind)) + ") input " +
                                              shape_to_string(in) + ": " + why);
}

std::size_t window_out(std::size_t in, std::size_t pad, std::size_t k, std::size_t s) {
    return (in + 2 * pad - k) / s + 1;
}

}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
    switch (spec.kind) {
        case LayerKind::Relu:
            return in;
        case LayerKind::Flatten:
            return {numel(in)};
        case LayerKind::Dense: {
            if (!spec.weight || spec.weight->rank() != 2) mismatch(spec, in, "weight must be [n_out, n_in]");
            if (spec.weight->dim(1) != numel(in)) {
                mismatch(spec, in, "n_in " + std::to_string(spec.weight->dim(1)) +
                                       " != input size " + std::to_string(numel(in)));
            }
            return {spec.weight->dim(0)};
        }
        case LayerKind::Conv2d: {
            if (!spec.weight || spec.weight->rank() != 4) mismatch(spec, in, "weight must be [C_out, C_in, kH, kW]");
            if (in.size() != 3) mismatch(spec, in, "expected [C,H,W]");
            const auto& w = spec.weight->shape;
            if (w[1] != in[0]) mismatch(spec, in, "C_in " + std::to_string(w[1]) + " != channels");
            if (spec.stride[0] == 0 || spec.stride[1] == 0) mismatch(spec, in, "zero stride");
            if (in[1] + 2 * spec.padding[0] < w[2] || in[2] + 2 * spec.padding[1] < w[3]) {
                mismatch(spec, in, "kernel larger than padded input");
            }
            return {w[0], window_out(in[1], spec.padding[0], w[2], spec.stride[0]),
                    window_out(in[2], spec.padding[1], w[3], spec.stride[1])};
        }
        case LayerKind::MaxPool2d:
        case LayerKind::AvgPool2d: {
            if (in.size() != 3) mismatch(spec, in, "expected [C,H,W]");
            if (spec.kernel[0] == 0 || spec.kernel[1] == 0 || spec.stride[0] == 0 || spec.stride[1] == 0) {
                mismatch(spec, in, "zero kernel or stride");
            }
            if (in[1] < spec.kernel[0] || in[2] < spec.kernel[1]) mismatch(spec, in, "kernel larger than input");
            return {in[0], window_out(in[1], 0, spec.kernel[0], spec.stride[0]),
                    window_out(in[2], 0, spec.kernel[1], spec.stride[1])};
        }
    }
    mismatch(spec, in, "unsupported layer");
}

NetworkSpec::NetworkSpec(std::vector<LayerSpec> layers, Shape input_shape, std::size_t num_classes,
                         std::optional<Preprocess> preprocess)
    : layers_(std::move(layers)),
      input_shape_(std::move(input_shape)),
      num_classes_(num_classes),
      preprocess_(std::move(preprocess)) {
    if (layers_.empty()) throw Error(ErrorCode::ShapeMismatch, "network has no layers");
    if (input_shape_.empty() || numel(input_shape_) == 0) {
        throw Error(ErrorCode::ShapeMismatch, "input shape must be non-empty");
    }
    if (num_classes_ == 0) throw Error(ErrorCode::ShapeMismatch, "num_classes must be positive");

    in_shapes_.push_back(input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& spec = layers_[i];
        if (spec.parameterized()) {
            if (!spec.weight->all_finite() || (spec.bias && !spec.bias->all_finite())) {
                throw Error(ErrorCode::RejectedInvalid, "layer '" + spec.name + "' has non-finite parameters");
            }
            if (spec.bias && spec.bias->shape != Shape{spec.weight->dim(0)}) {
                throw Error(ErrorCode::ShapeMismatch, "layer '" + spec.name + "' bias shape " +
                                                          shape_to_string(spec.bias->shape));
            }
            param_layers_.push_back(i);
        } else if (spec.weight || spec.bias) {
            throw Error(ErrorCode::ShapeMismatch, "layer '" + spec.name + "' carries parameters but is " +
                                                      std::string(to_string(spec.kind)));
        }
        in_shapes_.push_back(ceg::layer_output_shape(spec, in_shapes_.back()));
    }

    if (param_layers_.empty()) throw Error(ErrorCode::ShapeMismatch, "network has no parameterized layer");
    const auto& last = layers_.back();
    if (last.kind != LayerKind::Dense || last.weight->dim(0) != num_classes_) {
        throw Error(ErrorCode::ShapeMismatch, "final layer must be dense with n_out == num_classes");
    }

    activation_shapes_.push_back(input_shape_);
    for (std::size_t l = 1; l <= param_layers_.size(); ++l) {
        activation_shapes_.push_back(in_shapes_[graph_layer_end(l) + 1]);
    }
    if (preprocess_) {
        if (!(preprocess_->divide > 0.0)) throw Error(ErrorCode::InvalidArgument, "preprocess.divide must be positive");
        if (preprocess_->mean.size() != preprocess_->std.size() ||
            (!preprocess_->mean.empty() && preprocess_->mean.size() != input_shape_[0])) {
            throw Error(ErrorCode::InvalidArgument, "preprocess mean/std must have one entry per channel");
        }
        for (double s : preprocess_->std) {
            if (!(s > 0.0)) throw Error(ErrorCode::InvalidArgument, "preprocess.std must be positive");
        }
    }
}

std::size_t NetworkSpec::graph_layer_index(std::size_t l) const {
    if (l == 0 || l > param_layers_.size()) {
        throw Error(ErrorCode::InvalidLayer, "graph layer " + std::to_string(l) + " outside 1.." +
                                                 std::to_string(param_layers_.size()));
    }
    return param_layers_[l - 1];
}

std::size_t NetworkSpec::graph_layer_end(std::size_t l) const {
    graph_layer_index(l);
    return l == param_layers_.size() ? layers_.size() - 1 : param_layers_[l] - 1;
}

const Shape& NetworkSpec::activation_shape(std::size_t l) const {
    if (l > param_layers_.size()) {
        throw Error(ErrorCode::InvalidLayer, "graph layer " + std::to_string(l) + " out of range");
    }
    return activation_shapes_[l];
}

std::size_t NetworkSpec::node_count(std::size_t l) const {
    return graph_layer(l).weight->dim(0);
}

}  // namespace ceg
