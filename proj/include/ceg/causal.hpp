#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ceg/forward.hpp"
#include "ceg/intervention.hpp"
#include "ceg/model_io.hpp"

namespace ceg {

// Per-input treatment effects of one path-group intervention on the class-k
// logit: values[i] = logit_k(intervened, x_i) - logit_k(base, x_i).
struct TESamples {
    PathGroup group;
    double beta = 0.0;
    std::size_t class_id = 0;
    std::vector<double> values;
};

struct TestConfig {
    double alpha = 0.05;
    std::size_t min_samples = 30;

    void validate() const;
};

enum class NodeKind { Critical, Noisy, Neutral };

std::string_view to_string(NodeKind kind);

struct NodeDecision {
    std::size_t node = 0;
    double mean_te = 0.0;
    double std_te = 0.0;
    double z = 0.0;
    double p = 1.0;
    NodeKind kind = NodeKind::Neutral;
    double beta = 0.0;
    std::size_t n = 0;
};

// Unperturbed forward pass over a dataset, reused by every intervention on
// it: interventions on layer l+1 only need a^l and the layers above.
struct Baseline {
    ActivationTrace trace;
    Tensor logits;
    Tensor inputs;

    std::size_t size() const { return logits.dim(0); }
};

Baseline make_baseline(const NetworkView& net, const Tensor& inputs);

TESamples treatment_effect(const NetworkView& net, const PathGroup& group, double beta,
                           const LabeledDataset& X, std::size_t k);

// Same, reusing a baseline of the same network. Adds |X| to `evaluations`
// when given.
TESamples treatment_effect(const NetworkView& net, const PathGroup& group, double beta,
                           const Baseline& baseline, std::size_t k,
                           std::atomic<std::size_t>* evaluations = nullptr);

// Two-sided one-sample z-test of mean TE == 0 with post-hoc sign split:
// significant and negative -> critical, significant and positive -> noisy.
// Zero variance: nonzero mean is significant with p = 0, zero mean neutral.
NodeDecision z_test(std::span<const double> values, const TestConfig& cfg, std::size_t node = 0);
NodeDecision z_test(const TESamples& te, const TestConfig& cfg);

// One decision per parent node of layer l, in node order. The beta for node
// j is drawn from stream path_group_stream(l, j) of `seed`, so the result
// does not depend on the number of workers.
std::vector<NodeDecision> classify_layer(const NetworkView& net, std::size_t l,
                                         const std::vector<std::size_t>& targets,
                                         const LabeledDataset& X, std::size_t k,
                                         const InterventionPolicy& policy, const TestConfig& cfg,
                                         std::uint64_t seed);

std::vector<NodeDecision> classify_layer(const NetworkView& net, std::size_t l,
                                         const std::vector<std::size_t>& targets,
                                         const Baseline& baseline, std::size_t k,
                                         const InterventionPolicy& policy, const TestConfig& cfg,
                                         std::uint64_t seed,
                                         std::atomic<std::size_t>* evaluations = nullptr);

}  // namespace ceg
