#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceg/explain.hpp"

namespace ceg {

// A named explanation function: (single input [C, H, W], class) -> map.
struct Explainer {
    std::string name;
    std::function<SaliencyMap(const Tensor& x, std::size_t k)> fn;

    SaliencyMap operator()(const Tensor& x, std::size_t k) const { return fn(x, k); }
};

// Aggregate causal saliency at layer l using graphs[k], fixed in advance.
// The network and graphs must outlive the explainer.
Explainer causal_explainer(const NetworkView& net, const std::map<std::size_t, CausalGraph>& graphs, std::size_t l);
Explainer occlusion_explainer(const NetworkView& net, std::size_t patch = 4, std::size_t stride = 2, float fill = 0.0f);
// Uniform noise seeded by a hash of the input bytes and `seed`.
Explainer random_explainer(const NetworkSpec& net, std::uint64_t seed);
Explainer constant_explainer(const NetworkSpec& net);

std::uint64_t hash_tensor(const Tensor& x);

// max over draws x' = x + N(0, sigma^2) of |e(x) - e(x')| / |x - x'|.
// Draws with |x - x'| < 1e-12 are skipped.
double lipschitz_estimate(const Explainer& e, const Tensor& x, std::size_t k, double sigma, std::size_t m_runs,
                          std::uint64_t seed);

// Default perturbation scale: 0.1 of the input's max - min.
double default_noise_sigma(const Tensor& x);

struct PatchGrid {
    std::size_t height = 0, width = 0, grid = 7;

    std::size_t patch_count() const { return grid * grid; }
    // Pixel bounds [r0, r1) x [c0, c1) of patch p (row-major); the last row
    // and column of patches absorb the remainder.
    std::array<std::size_t, 4> bounds(std::size_t p) const;
};

// Patches ranked by mean attribution, highest first, ties by patch index.
std::vector<std::size_t> rank_patches(const SaliencyMap& map, const PatchGrid& grid);

// Iterative removal of features: replace the top-t patches by their mean
// pixel value for t = 1..g^2 and average 1 - clip(p_t / p_0, 0, 1), where p
// is the softmax probability of class k.
double irof(const NetworkView& net, const SaliencyMap& map, const Tensor& x, std::size_t k, std::size_t grid = 7);
double irof(const NetworkView& net, const Explainer& e, const Tensor& x, std::size_t k, std::size_t grid = 7);

std::vector<double> softmax(std::span<const float> logits);

// Fraction of X predicted as k.
double class_accuracy(const NetworkView& net, const LabeledDataset& X, std::size_t k);

// round(fraction * n), clamped to [0, n].
std::size_t fraction_count(double fraction, std::size_t n);

// Path groups masking, in each evaluated layer of g, the top fraction of
// critical nodes by |mean TE| (lowest index on ties) toward that layer's targets.
std::vector<PathGroup> top_critical_groups(const NetworkSpec& net, const CausalGraph& g, double fraction);
// Same per-layer counts, drawn uniformly from the non-critical nodes.
std::vector<PathGroup> random_noncritical_groups(const NetworkSpec& net, const CausalGraph& g, double fraction,
                                                 Rng& rng);
// Every listed group with beta = 0, grouped by layer.
NetworkView mask_groups(const NetworkView& net, const std::vector<PathGroup>& groups);

struct FidelityPoint {
    double fraction = 0.0;
    double accuracy = 0.0;
    std::size_t masked_count = 0;
    double random_accuracy = 0.0;  // mean over control draws; equals accuracy when draws == 0
};

struct FidelityResult {
    double unmasked_accuracy = 0.0;
    std::vector<FidelityPoint> points;
};

FidelityResult fidelity_curve(const NetworkView& net, const CausalGraph& g, const LabeledDataset& X_k, std::size_t k,
                              const std::vector<double>& fractions, std::size_t random_draws = 0,
                              std::uint64_t seed = 0);

struct RepairRow {
    double fraction = 0.0;
    std::string split;  // "easy" or "hard"
    std::size_t size = 0;
    double accuracy = 0.0;
    std::size_t masked_count = 0;
};

// X holds inputs of any class; only label-k inputs are used. Noisy nodes of
// each registry layer are ranked by mean TE descending and the top fraction
// masked with beta = 0. Empty splits produce no rows.
std::vector<RepairRow> repair_eval(const NetworkView& net, const NoisyRegistry& d, const LabeledDataset& X,
                                   std::size_t k, const std::vector<double>& fractions);

struct MetricReport {
    std::string metric;
    std::vector<std::string> keys;  // one label per score
    std::vector<double> scores;
    double mean = 0.0;
    double variance = 0.0;  // population variance
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json details;  // metric-specific tables, null when absent
};

MetricReport make_report(std::string metric, std::vector<std::string> keys, std::vector<double> scores,
                         nlohmann::json config);
nlohmann::json report_to_json(const MetricReport& r);
std::string report_to_csv(const MetricReport& r);
nlohmann::json fidelity_to_json(const FidelityResult& f);
nlohmann::json repair_to_json(const std::vector<RepairRow>& rows);

// Runs fn(i) for i in [0, n) in parallel; results in index order.
std::vector<double> per_sample(std::size_t n, const std::function<double(std::size_t)>& fn);

std::vector<double> parse_fractions(const std::string& text);

}  // namespace ceg
