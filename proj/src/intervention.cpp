#include "ceg/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ceg/error.hpp"

namespace ceg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Scales the group's slice of a child-layer weight tensor in place.
void scale_group(const NetworkSpec& net, const PathGroup& g, Tensor& w, double beta) {
    const std::size_t child = g.parent_layer + 1;
    const auto& child_spec = net.graph_layer(child);
    const auto b = static_cast<float>(beta);
    if (child_spec.kind == LayerKind::Conv2d) {
        const std::size_t c_in = w.dim(1), plane = w.dim(2) * w.dim(3);
        for (std::size_t t : g.targets) {
            float* p = w.data.data() + (t * c_in + g.parent_node) * plane;
            for (std::size_t q = 0; q < plane; ++q) p[q] *= b;
        }
    } else {
        const std::size_t n_in = w.dim(1);
        const std::size_t span = n_in / net.node_count(g.parent_layer);
        for (std::size_t t : g.targets) {
            float* p = w.data.data() + t * n_in + g.parent_node * span;
            for (std::size_t q = 0; q < span; ++q) p[q] *= b;
        }
    }
}

}  // namespace

std::string_view to_string(InterventionMode mode) {
    return mode == InterventionMode::Binary ? "binary" : "continuous";
}

PathGroup make_path_group(const NetworkSpec& net, std::size_t l, std::size_t j, std::vector<std::size_t> targets) {
    const std::size_t L = net.graph_layer_count();
    if (l == 0 || l >= L) {
        throw Error(ErrorCode::InvalidLayer, "parent layer " + std::to_string(l) + " outside 1.." +
                                                 std::to_string(L == 0 ? 0 : L - 1));
    }
    if (j >= net.node_count(l)) {
        throw Error(ErrorCode::InvalidGroup, "parent node " + std::to_string(j) + " >= " +
                                                 std::to_string(net.node_count(l)));
    }
    if (targets.empty()) throw Error(ErrorCode::InvalidGroup, "path group needs at least one target");
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    if (targets.back() >= net.node_count(l + 1)) {
        throw Error(ErrorCode::InvalidGroup, "target " + std::to_string(targets.back()) + " >= " +
                                                 std::to_string(net.node_count(l + 1)));
    }
    const auto& parent = net.graph_layer(l);
    const auto& child = net.graph_layer(l + 1);
    const auto& act = net.activation_shape(l);
    if (numel(act) % net.node_count(l) != 0) {
        throw Error(ErrorCode::InvalidGroup, "activation of layer " + std::to_string(l) +
                                                 " does not split evenly into nodes");
    }
    if (child.kind == LayerKind::Conv2d && (act.size() != 3 || act[0] != net.node_count(l))) {
        throw Error(ErrorCode::InvalidGroup, "conv child needs parent channels as nodes");
    }
    PathGroup g;
    g.parent_layer = l;
    g.parent_node = j;
    g.targets = std::move(targets);
    g.crossing_flatten = parent.kind == LayerKind::Conv2d && child.kind == LayerKind::Dense;
    return g;
}

std::vector<PathGroup> enumerate_path_groups(const NetworkSpec& net, std::size_t l, std::vector<std::size_t> targets) {
    if (l == 0 || l >= net.graph_layer_count()) {
        throw Error(ErrorCode::InvalidLayer, "cannot enumerate parents of layer " + std::to_string(l));
    }
    std::vector<PathGroup> out;
    out.reserve(net.node_count(l));
    for (std::size_t j = 0; j < net.node_count(l); ++j) out.push_back(make_path_group(net, l, j, targets));
    return out;
}

InterventionPolicy InterventionPolicy::continuous(double b, double epsilon) {
    InterventionPolicy p;
    p.mode = InterventionMode::Continuous;
    p.b = b;
    p.epsilon = epsilon;
    p.validate();
    return p;
}

void InterventionPolicy::validate() const {
    if (mode == InterventionMode::Continuous && !(epsilon > 0.0 && epsilon < b && b < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "continuous policy needs 0 < epsilon < b < 1 (b=" +
                                                    std::to_string(b) + ", epsilon=" + std::to_string(epsilon) + ")");
    }
}

std::uint64_t mix_seed(std::uint64_t root_seed, std::uint64_t stream_index) {
    return splitmix64(root_seed ^ splitmix64(stream_index));
}

std::uint64_t path_group_stream(std::size_t l, std::size_t j) {
    return (static_cast<std::uint64_t>(l) << 32) | static_cast<std::uint64_t>(j);
}

Rng Rng::stream(std::uint64_t root_seed, std::uint64_t stream_index) {
    return Rng(mix_seed(root_seed, stream_index));
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double sigma) {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return mean + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

InterventionValue sample_beta(const InterventionPolicy& policy, Rng& rng) {
    if (policy.mode == InterventionMode::Binary) return {0.0};
    return {rng.uniform(policy.b - policy.epsilon, policy.b + policy.epsilon)};
}

NetworkView apply(const NetworkView& net, const PathGroup& group, double beta) {
    return apply_all(net, std::span<const PathGroup>(&group, 1), beta);
}

NetworkView apply_all(const NetworkView& net, std::span<const PathGroup> groups, double beta) {
    const NetworkSpec& base = net.base();
    std::vector<std::size_t> child_layers;
    for (const auto& g : groups) {
        // re-validate against this network
        const auto checked = make_path_group(base, g.parent_layer, g.parent_node, g.targets);
        if (checked.targets != g.targets) throw Error(ErrorCode::InvalidGroup, "targets must be sorted and unique");
        child_layers.push_back(g.parent_layer + 1);
    }
    std::sort(child_layers.begin(), child_layers.end());
    child_layers.erase(std::unique(child_layers.begin(), child_layers.end()), child_layers.end());

    NetworkView out = net;
    for (std::size_t child : child_layers) {
        const std::size_t idx = base.graph_layer_index(child);
        Tensor w = net.weight(idx);
        for (const auto& g : groups) {
            if (g.parent_layer + 1 == child) scale_group(base, g, w, beta);
        }
        out = out.with_weight(idx, std::move(w));
    }
    return out;
}

std::size_t path_group_weight_count(const NetworkSpec& net, const PathGroup& group) {
    const auto& w = *net.graph_layer(group.parent_layer + 1).weight;
    if (w.rank() == 4) return group.targets.size() * w.dim(2) * w.dim(3);
    return group.targets.size() * (w.dim(1) / net.node_count(group.parent_layer));
}

}  // namespace ceg
