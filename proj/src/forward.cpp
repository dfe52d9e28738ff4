#include "ceg/forward.hpp"

#include <algorithm>

#include "ceg/error.hpp"
#include "ceg/kernels.hpp"

namespace ceg {

const Tensor& NetworkView::weight(std::size_t layer_index) const {
    for (const auto& [idx, w] : overrides_) {
        if (idx == layer_index) return *w;
    }
    const auto& layer = base_->layer(layer_index);
    if (!layer.weight) throw Error(ErrorCode::InvalidLayer, "layer '" + layer.name + "' has no weight");
    return *layer.weight;
}

bool NetworkView::overrides(std::size_t layer_index) const {
    return std::any_of(overrides_.begin(), overrides_.end(),
                       [&](const auto& o) { return o.first == layer_index; });
}

NetworkView NetworkView::with_weight(std::size_t layer_index, Tensor weight) const {
    const auto& layer = base_->layer(layer_index);
    if (!layer.weight || layer.weight->shape != weight.shape) {
        throw Error(ErrorCode::ShapeMismatch, "override for layer '" + layer.name + "' has shape " +
                                                  shape_to_string(weight.shape));
    }
    NetworkView out = *this;
    auto ptr = std::make_shared<const Tensor>(std::move(weight));
    for (auto& o : out.overrides_) {
        if (o.first == layer_index) {
            o.second = std::move(ptr);
            return out;
        }
    }
    out.overrides_.emplace_back(layer_index, std::move(ptr));
    return out;
}

const Tensor& ActivationTrace::at(std::size_t l) const {
    if (l == 0 || l > layers.size()) {
        throw Error(ErrorCode::InvalidLayer, "trace has no graph layer " + std::to_string(l));
    }
    return layers[l - 1];
}

namespace {

Tensor apply_layer(const NetworkView& view, std::size_t i, const Tensor& in) {
    const NetworkSpec& net = view.base();
    const LayerSpec& spec = net.layer(i);
    const Shape& in_shape = net.layer_input_shape(i);
    const std::size_t n = in.dim(0);

    Shape out_shape = net.layer_output_shape(i);
    out_shape.insert(out_shape.begin(), n);

    switch (spec.kind) {
        case LayerKind::Relu: {
            Tensor out = in;
            kernels::relu(out.values());
            return out;
        }
        case LayerKind::Flatten:
            return Tensor(std::move(out_shape), in.data);
        case LayerKind::Dense: {
            Tensor out(std::move(out_shape));
            const Tensor& w = view.weight(i);
            std::span<const float> bias;
            if (spec.bias) bias = spec.bias->values();
            kernels::dense(n, w.dim(1), w.dim(0), in.values(), w.values(), bias, out.values());
            return out;
        }
        case LayerKind::Conv2d: {
            Tensor out(std::move(out_shape));
            const Tensor& w = view.weight(i);
            kernels::ConvGeometry g;
            g.batch = n;
            g.in_c = in_shape[0];
            g.in_h = in_shape[1];
            g.in_w = in_shape[2];
            g.out_c = w.dim(0);
            g.k_h = w.dim(2);
            g.k_w = w.dim(3);
            g.stride_h = spec.stride[0];
            g.stride_w = spec.stride[1];
            g.pad_h = spec.padding[0];
            g.pad_w = spec.padding[1];
            std::span<const float> bias;
            if (spec.bias) bias = spec.bias->values();
            kernels::conv2d(g, in.values(), w.values(), bias, out.values());
            return out;
        }
        case LayerKind::MaxPool2d:
        case LayerKind::AvgPool2d: {
            Tensor out(std::move(out_shape));
            kernels::PoolGeometry g;
            g.batch = n;
            g.channels = in_shape[0];
            g.in_h = in_shape[1];
            g.in_w = in_shape[2];
            g.k_h = spec.kernel[0];
            g.k_w = spec.kernel[1];
            g.stride_h = spec.stride[0];
            g.stride_w = spec.stride[1];
            if (spec.kind == LayerKind::MaxPool2d) {
                kernels::maxpool2d(g, in.values(), out.values());
            } else {
                kernels::avgpool2d(g, in.values(), out.values());
            }
            return out;
        }
    }
    throw Error(ErrorCode::Invariant, "unhandled layer kind");
}

void check_batch(const Tensor& batch, const Shape& expected) {
    if (batch.rank() != expected.size() + 1 ||
        !std::equal(expected.begin(), expected.end(), batch.shape.begin() + 1)) {
        throw Error(ErrorCode::ShapeMismatch, "batch shape " + shape_to_string(batch.shape) +
                                                  " does not match [N]+" + shape_to_string(expected));
    }
}

template <typename OnGraphLayer>
Tensor run_layers(const NetworkView& view, std::size_t first_layer, Tensor x, OnGraphLayer&& on_graph_layer) {
    const NetworkSpec& net = view.base();
    std::size_t next_l = 1;
    while (next_l <= net.graph_layer_count() && net.graph_layer_end(next_l) < first_layer) ++next_l;
    for (std::size_t i = first_layer; i < net.layers().size(); ++i) {
        x = apply_layer(view, i, x);
        if (next_l <= net.graph_layer_count() && i == net.graph_layer_end(next_l)) {
            on_graph_layer(next_l, x);
            ++next_l;
        }
    }
    return x;
}

}  // namespace

Tensor forward(const NetworkView& net, const Tensor& batch) {
    check_batch(batch, net.base().input_shape());
    return run_layers(net, 0, batch, [](std::size_t, const Tensor&) {});
}

TracedOutput forward_traced(const NetworkView& net, const Tensor& batch) {
    check_batch(batch, net.base().input_shape());
    TracedOutput out;
    out.trace.layers.reserve(net.base().graph_layer_count());
    out.logits = run_layers(net, 0, batch, [&](std::size_t, const Tensor& a) { out.trace.layers.push_back(a); });
    return out;
}

Tensor forward_suffix(const NetworkView& net, std::size_t l, const Tensor& activation) {
    const NetworkSpec& base = net.base();
    if (l >= base.graph_layer_count()) {
        if (l == base.graph_layer_count()) return activation;
        throw Error(ErrorCode::InvalidLayer, "forward_suffix from layer " + std::to_string(l));
    }
    check_batch(activation, base.activation_shape(l));
    return run_layers(net, base.graph_layer_index(l + 1), activation, [](std::size_t, const Tensor&) {});
}

void standardize(const NetworkSpec& net, Tensor& batch) {
    const auto& pre = net.preprocess();
    if (!pre || pre->mean.empty()) return;
    check_batch(batch, net.input_shape());
    const std::size_t channels = net.input_shape()[0];
    const std::size_t plane = numel(net.input_shape()) / channels;
    for (std::size_t n = 0; n < batch.dim(0); ++n) {
        auto row = batch.row(n);
        for (std::size_t c = 0; c < channels; ++c) {
            const double m = pre->mean[c], s = pre->std[c];
            for (std::size_t p = 0; p < plane; ++p) {
                float& v = row[c * plane + p];
                v = static_cast<float>((v - m) / s);
            }
        }
    }
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    std::vector<std::size_t> out;
    if (logits.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "argmax_rows expects [N, C]");
    out.reserve(logits.dim(0));
    for (std::size_t n = 0; n < logits.dim(0); ++n) {
        auto r = logits.row(n);
        out.push_back(static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()));
    }
    return out;
}

}  // namespace ceg
