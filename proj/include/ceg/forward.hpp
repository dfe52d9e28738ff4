#pragma once

#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include "ceg/network.hpp"
#include "ceg/tensor.hpp"

namespace ceg {

// A NetworkSpec seen through zero or more replaced weight tensors. Only the
// replaced tensors are owned; everything else is read from the base, which
// must outlive the view. Views are cheap to copy and never modify the base.
class NetworkView {
public:
    NetworkView(const NetworkSpec& base) : base_(&base) {}  // NOLINT: implicit by design of the API

    const NetworkSpec& base() const noexcept { return *base_; }

    // Weight of layers()[layer_index], honouring overrides.
    const Tensor& weight(std::size_t layer_index) const;
    bool overrides(std::size_t layer_index) const;
    std::size_t override_count() const noexcept { return overrides_.size(); }

    NetworkView with_weight(std::size_t layer_index, Tensor weight) const;

private:
    const NetworkSpec* base_;
    std::vector<std::pair<std::size_t, std::shared_ptr<const Tensor>>> overrides_;
};

// Per-graph-layer activations a^1..a^L for a batch; at(L) are the logits.
struct ActivationTrace {
    std::vector<Tensor> layers;

    std::size_t size() const noexcept { return layers.size(); }
    const Tensor& at(std::size_t l) const;  // 1-based
};

struct TracedOutput {
    Tensor logits;
    ActivationTrace trace;
};

// batch: [N] + input_shape. Returns logits [N, num_classes].
Tensor forward(const NetworkView& net, const Tensor& batch);
TracedOutput forward_traced(const NetworkView& net, const Tensor& batch);

// Runs graph layers l+1..L given the batched activation a^l (a^0 is the
// input). Equals forward() when the layers up to l are unchanged.
Tensor forward_suffix(const NetworkView& net, std::size_t l, const Tensor& activation);

// Applies preprocess mean/std (when the model declares them) in place.
void standardize(const NetworkSpec& net, Tensor& batch);

std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace ceg
