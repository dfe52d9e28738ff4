#include "ceg/causal.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <numbers>

#include "ceg/error.hpp"

namespace ceg {

std::string_view to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::Critical: return "critical";
        case NodeKind::Noisy: return "noisy";
        case NodeKind::Neutral: return "neutral";
    }
    return "unknown";
}

void TestConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1), got " + std::to_string(alpha));
    }
    if (min_samples < 2) throw Error(ErrorCode::InvalidArgument, "min_samples must be at least 2");
}

Baseline make_baseline(const NetworkView& net, const Tensor& inputs) {
    auto traced = forward_traced(net, inputs);
    return Baseline{std::move(traced.trace), std::move(traced.logits), inputs};
}

TESamples treatment_effect(const NetworkView& net, const PathGroup& group, double beta,
                           const LabeledDataset& X, std::size_t k) {
    if (X.size() == 0) throw Error(ErrorCode::EmptyClass, "treatment effect over an empty dataset");
    return treatment_effect(net, group, beta, make_baseline(net, X.images), k);
}

TESamples treatment_effect(const NetworkView& net, const PathGroup& group, double beta,
                           const Baseline& baseline, std::size_t k,
                           std::atomic<std::size_t>* evaluations) {
    const NetworkSpec& base = net.base();
    if (k >= base.num_classes()) {
        throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(k) + " out of range");
    }
    if (baseline.size() == 0) throw Error(ErrorCode::EmptyClass, "treatment effect over an empty dataset");

    const NetworkView intervened = apply(net, group, beta);
    const std::size_t l = group.parent_layer;
    const Tensor logits = forward_suffix(intervened, l, baseline.trace.at(l));

    TESamples te;
    te.group = group;
    te.beta = beta;
    te.class_id = k;
    te.values.resize(baseline.size());
    const std::size_t C = base.num_classes();
    for (std::size_t i = 0; i < baseline.size(); ++i) {
        te.values[i] = static_cast<double>(logits.data[i * C + k]) -
                       static_cast<double>(baseline.logits.data[i * C + k]);
        if (!std::isfinite(te.values[i])) {
            throw Error(ErrorCode::Invariant, "non-finite treatment effect for input " + std::to_string(i));
        }
    }
    if (evaluations) evaluations->fetch_add(baseline.size(), std::memory_order_relaxed);
    return te;
}

NodeDecision z_test(std::span<const double> values, const TestConfig& cfg, std::size_t node) {
    cfg.validate();
    const std::size_t n = values.size();
    if (n < cfg.min_samples) {
        throw Error(ErrorCode::TooFewSamples, std::to_string(n) + " samples, need " + std::to_string(cfg.min_samples));
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    NodeDecision d;
    d.node = node;
    d.mean_te = mean;
    d.std_te = sd;
    d.n = n;
    if (sd == 0.0) {
        if (mean == 0.0) {
            d.z = 0.0;
            d.p = 1.0;
        } else {
            d.z = std::copysign(std::numeric_limits<double>::infinity(), mean);
            d.p = 0.0;
        }
    } else {
        d.z = mean / (sd / std::sqrt(static_cast<double>(n)));
        d.p = std::erfc(std::fabs(d.z) / std::numbers::sqrt2);
    }
    if (d.p < cfg.alpha && mean < 0.0) {
        d.kind = NodeKind::Critical;
    } else if (d.p < cfg.alpha && mean > 0.0) {
        d.kind = NodeKind::Noisy;
    } else {
        d.kind = NodeKind::Neutral;
    }
    return d;
}

NodeDecision z_test(const TESamples& te, const TestConfig& cfg) {
    auto d = z_test(te.values, cfg, te.group.parent_node);
    d.beta = te.beta;
    return d;
}

std::vector<NodeDecision> classify_layer(const NetworkView& net, std::size_t l,
                                         const std::vector<std::size_t>& targets, const LabeledDataset& X,
                                         std::size_t k, const InterventionPolicy& policy, const TestConfig& cfg,
                                         std::uint64_t seed) {
    if (X.size() == 0) throw Error(ErrorCode::EmptyClass, "classify_layer over an empty dataset");
    return classify_layer(net, l, targets, make_baseline(net, X.images), k, policy, cfg, seed);
}

std::vector<NodeDecision> classify_layer(const NetworkView& net, std::size_t l,
                                         const std::vector<std::size_t>& targets, const Baseline& baseline,
                                         std::size_t k, const InterventionPolicy& policy, const TestConfig& cfg,
                                         std::uint64_t seed, std::atomic<std::size_t>* evaluations) {
    policy.validate();
    cfg.validate();
    const auto groups = enumerate_path_groups(net.base(), l, targets);
    std::vector<NodeDecision> out(groups.size());
    std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(groups.size()); ++idx) {
        const auto j = static_cast<std::size_t>(idx);
        try {
            Rng rng = Rng::stream(seed, path_group_stream(l, j));
            const double beta = sample_beta(policy, rng).beta;
            out[j] = z_test(treatment_effect(net, groups[j], beta, baseline, k, evaluations), cfg);
        } catch (...) {
#pragma omp critical(ceg_classify_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace ceg
