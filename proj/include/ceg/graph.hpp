#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceg/causal.hpp"

namespace ceg {

struct GraphLayer {
    std::size_t layer = 0;                // l, 1-based
    std::string name;
    bool evaluated = false;               // false when the descent stopped above
    std::vector<std::size_t> targets;     // nodes of l+1 the parents were tested against
    std::vector<NodeDecision> critical;   // J^l
    std::vector<NodeDecision> noisy;      // I^l
    std::vector<NodeDecision> decisions;  // every parent; empty when read back from JSON

    std::vector<std::size_t> critical_nodes() const;
    std::vector<std::size_t> noisy_nodes() const;
};

// Per-class causal explanatory graph. layers[l-1] describes graph layer l;
// layers[L-1] is the seed holding the class node k.
struct CausalGraph {
    std::size_t class_id = 0;
    double alpha = 0.05;
    InterventionPolicy policy;
    std::uint64_t seed = 0;
    double baseline_mean_logit = 0.0;
    std::vector<GraphLayer> layers;

    std::size_t layer_count() const noexcept { return layers.size(); }
    const GraphLayer& layer(std::size_t l) const;
    std::size_t critical_count() const;
};

struct NoisyRegistry {
    struct Entry {
        std::size_t layer = 0;
        std::vector<std::size_t> targets;
        std::vector<NodeDecision> noisy;
    };
    std::vector<Entry> layers;  // only evaluated layers, top-down order

    std::size_t noisy_count() const;
};

struct GraphInference {
    CausalGraph graph;
    NoisyRegistry noisy;
    std::size_t te_evaluations = 0;
};

// Top-down inference: for l = L-1 down to 1, test every parent of l against
// the critical nodes of l+1 (the class node at L-1). Stops when a layer has
// no critical nodes; the remaining layers are recorded as not evaluated.
GraphInference infer_graph(const NetworkView& net, const LabeledDataset& X_k, std::size_t k,
                           const InterventionPolicy& policy, const TestConfig& cfg, std::uint64_t seed);
GraphInference infer_graph(const NetworkView& net, const Baseline& baseline, std::size_t k,
                           const InterventionPolicy& policy, const TestConfig& cfg, std::uint64_t seed);

// Throws Error(Invariant) when target threading, node ranges or the
// critical/noisy partition are violated.
void check_graph(const NetworkSpec& net, const CausalGraph& g, const NoisyRegistry& d);

struct NodeFrequency {
    std::size_t layer = 0;
    std::size_t node = 0;
    std::size_t appearances = 0;
    double frequency = 0.0;
};

struct StabilityReport {
    std::size_t runs = 0;
    std::size_t class_id = 0;
    double b_lo = 0.0, b_hi = 0.0, epsilon = 0.01;
    std::uint64_t seed = 0;
    std::vector<double> b_schedule;          // b of every run
    std::vector<NodeFrequency> nodes;        // nodes that appeared at least once
    std::vector<std::size_t> histogram;      // 10 bins of appearance rate; last bin is [0.9, 1.0]

    // Share of ever-appearing nodes whose frequency is >= threshold.
    double share_at_least(double threshold) const;
};

// b ascends through ceil(runs / 10) evenly spaced interior points of
// (lo, hi), changing every 10 runs. Run r uses seed + r.
std::vector<double> stability_schedule(std::size_t runs, double lo, double hi);

StabilityReport stability_study(const NetworkView& net, const LabeledDataset& X_k, std::size_t k,
                                std::size_t runs, double b_lo, double b_hi, const TestConfig& cfg,
                                std::uint64_t seed, double epsilon = 0.01);

nlohmann::json graph_to_json(const CausalGraph& g, const NoisyRegistry& d);
std::pair<CausalGraph, NoisyRegistry> graph_from_json(const nlohmann::json& j);
std::string graph_to_dot(const CausalGraph& g, const NoisyRegistry& d);
// Rows are node indices, columns graph layers 1..L-1; values are mean TE
// divided by |mean baseline class logit|. Nodes beyond a layer's width are blank.
std::string ate_heatmap_csv(const NetworkSpec& net, const CausalGraph& g);
nlohmann::json stability_to_json(const StabilityReport& r);

enum class GraphFormat { Json, Dot };

void export_graph(const CausalGraph& g, const NoisyRegistry& d, GraphFormat format,
                  const std::filesystem::path& path, const nlohmann::json& meta = nlohmann::json::object());

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ceg
