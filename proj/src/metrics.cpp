#include "ceg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <numeric>
#include <sstream>

#include "ceg/error.hpp"

namespace ceg {

namespace {

const CausalGraph& graph_for(const std::map<std::size_t, CausalGraph>& graphs, std::size_t k) {
    const auto it = graphs.find(k);
    if (it == graphs.end()) throw Error(ErrorCode::InvalidArgument, "no causal graph for class " + std::to_string(k));
    return it->second;
}

void check_unit_range(double f, const char* what) {
    if (!(f >= 0.0 && f <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, std::string(what) + " fraction must lie in [0, 1], got " + std::to_string(f));
    }
}

}  // namespace

Explainer causal_explainer(const NetworkView& net, const std::map<std::size_t, CausalGraph>& graphs, std::size_t l) {
    return {"causal", [net, &graphs, l](const Tensor& x, std::size_t k) {
                return aggregate_saliency(net, x, graph_for(graphs, k), l);
            }};
}

Explainer occlusion_explainer(const NetworkView& net, std::size_t patch, std::size_t stride, float fill) {
    return {"occlusion", [net, patch, stride, fill](const Tensor& x, std::size_t k) {
                return occlusion_baseline(net, x, k, patch, stride, fill);
            }};
}

std::uint64_t hash_tensor(const Tensor& x) {
    std::uint64_t h = 1469598103934665603ull;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (std::size_t d : x.shape) {
        const auto v = static_cast<std::uint64_t>(d);
        feed(&v, sizeof v);
    }
    feed(x.data.data(), x.data.size() * sizeof(float));
    return h;
}

Explainer random_explainer(const NetworkSpec& net, std::uint64_t seed) {
    const auto [H, W] = input_plane(net);
    return {"random", [H, W, seed](const Tensor& x, std::size_t k) {
                Rng rng = Rng::stream(seed, hash_tensor(x) ^ static_cast<std::uint64_t>(k));
                Tensor plane({H, W});
                for (float& v : plane.data) v = static_cast<float>(rng.uniform());
                return minmax_normalize(plane, "random");
            }};
}

Explainer constant_explainer(const NetworkSpec& net) {
    const auto [H, W] = input_plane(net);
    return {"constant", [H, W](const Tensor&, std::size_t) { return minmax_normalize(Tensor({H, W}), "constant"); }};
}

double default_noise_sigma(const Tensor& x) {
    if (x.size() == 0) throw Error(ErrorCode::ShapeMismatch, "empty input");
    const auto [lo, hi] = std::minmax_element(x.data.begin(), x.data.end());
    return 0.1 * (static_cast<double>(*hi) - static_cast<double>(*lo));
}

double lipschitz_estimate(const Explainer& e, const Tensor& x, std::size_t k, double sigma, std::size_t m_runs,
                          std::uint64_t seed) {
    if (m_runs < 1) throw Error(ErrorCode::InvalidArgument, "m_runs must be at least 1");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::InvalidArgument, "noise sigma must be positive");
    const SaliencyMap ex = e(x, k);
    Rng rng = Rng::stream(seed, hash_tensor(x));
    double best = 0.0;
    std::size_t used = 0;
    for (std::size_t run = 0; run < m_runs; ++run) {
        Tensor xp = x;
        for (float& v : xp.data) v = static_cast<float>(v + rng.normal(0.0, sigma));
        double dx = 0.0;
        for (std::size_t q = 0; q < x.size(); ++q) {
            const double d = static_cast<double>(xp.data[q]) - static_cast<double>(x.data[q]);
            dx += d * d;
        }
        dx = std::sqrt(dx);
        if (dx < 1e-12) continue;
        const SaliencyMap ep = e(xp, k);
        if (ep.values.size() != ex.values.size()) throw Error(ErrorCode::ShapeMismatch, "explanations differ in size");
        double de = 0.0;
        for (std::size_t q = 0; q < ex.values.size(); ++q) {
            const double d = static_cast<double>(ep.values[q]) - static_cast<double>(ex.values[q]);
            de += d * d;
        }
        best = std::max(best, std::sqrt(de) / dx);
        ++used;
    }
    if (used == 0) throw Error(ErrorCode::AllDrawsDegenerate, "every perturbation was below 1e-12");
    return best;
}

std::array<std::size_t, 4> PatchGrid::bounds(std::size_t p) const {
    if (grid == 0 || grid > height || grid > width) {
        throw Error(ErrorCode::InvalidArgument, "grid " + std::to_string(grid) + " does not fit " +
                                                    std::to_string(height) + "x" + std::to_string(width));
    }
    if (p >= patch_count()) throw Error(ErrorCode::InvalidArgument, "patch index out of range");
    const std::size_t pr = p / grid, pc = p % grid;
    const std::size_t sh = height / grid, sw = width / grid;
    return {pr * sh, pr + 1 == grid ? height : (pr + 1) * sh, pc * sw, pc + 1 == grid ? width : (pc + 1) * sw};
}

std::vector<std::size_t> rank_patches(const SaliencyMap& map, const PatchGrid& grid) {
    if (map.height != grid.height || map.width != grid.width) {
        throw Error(ErrorCode::ShapeMismatch, "saliency map does not match the patch grid");
    }
    std::vector<double> mean(grid.patch_count());
    for (std::size_t p = 0; p < mean.size(); ++p) {
        const auto [r0, r1, c0, c1] = grid.bounds(p);
        double s = 0.0;
        for (std::size_t r = r0; r < r1; ++r) {
            for (std::size_t c = c0; c < c1; ++c) s += map.at(r, c);
        }
        mean[p] = s / static_cast<double>((r1 - r0) * (c1 - c0));
    }
    std::vector<std::size_t> order(mean.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
    return order;
}

std::vector<double> softmax(std::span<const float> logits) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(static_cast<double>(logits[i]) - m);
    for (double& v : p) v /= z;
    return p;
}

double irof(const NetworkView& net, const SaliencyMap& map, const Tensor& x, std::size_t k, std::size_t grid) {
    const NetworkSpec& base = net.base();
    if (x.shape != base.input_shape()) throw Error(ErrorCode::ShapeMismatch, "irof input has the wrong shape");
    if (k >= base.num_classes()) throw Error(ErrorCode::InvalidArgument, "class out of range");
    const auto [H, W] = input_plane(base);
    const PatchGrid pg{H, W, grid};
    const auto order = rank_patches(map, pg);
    const std::size_t channels = x.size() / (H * W);

    std::vector<Tensor> variants;
    variants.reserve(order.size() + 1);
    variants.push_back(x);
    Tensor cur = x;
    for (std::size_t p : order) {
        const auto [r0, r1, c0, c1] = pg.bounds(p);
        for (std::size_t ch = 0; ch < channels; ++ch) {
            double s = 0.0;
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t c = c0; c < c1; ++c) s += x.data[(ch * H + r) * W + c];
            }
            const auto m = static_cast<float>(s / static_cast<double>((r1 - r0) * (c1 - c0)));
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t c = c0; c < c1; ++c) cur.data[(ch * H + r) * W + c] = m;
            }
        }
        variants.push_back(cur);
    }
    const Tensor logits = forward(net, stack(variants));
    const double p0 = softmax(logits.row(0))[k];
    if (p0 < 1e-12) throw Error(ErrorCode::ZeroBaseline, "class probability of the unperturbed input is below 1e-12");
    double acc = 0.0;
    for (std::size_t t = 1; t < variants.size(); ++t) {
        const double pt = softmax(logits.row(t))[k];
        acc += 1.0 - std::clamp(pt / p0, 0.0, 1.0);
    }
    return acc / static_cast<double>(order.size());
}

double irof(const NetworkView& net, const Explainer& e, const Tensor& x, std::size_t k, std::size_t grid) {
    return irof(net, e(x, k), x, k, grid);
}

double class_accuracy(const NetworkView& net, const LabeledDataset& X, std::size_t k) {
    if (X.size() == 0) throw Error(ErrorCode::EmptyClass, "accuracy over an empty dataset");
    const auto pred = argmax_rows(forward(net, X.images));
    const auto hits = std::count(pred.begin(), pred.end(), k);
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::size_t fraction_count(double fraction, std::size_t n) {
    check_unit_range(fraction, "mask");
    return std::min(n, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
}

std::vector<PathGroup> top_critical_groups(const NetworkSpec& net, const CausalGraph& g, double fraction) {
    std::vector<PathGroup> out;
    for (std::size_t l = 1; l < g.layer_count(); ++l) {
        const auto& gl = g.layer(l);
        if (!gl.evaluated || gl.critical.empty()) continue;
        std::vector<const NodeDecision*> ranked;
        for (const auto& d : gl.critical) ranked.push_back(&d);
        std::stable_sort(ranked.begin(), ranked.end(), [](const NodeDecision* a, const NodeDecision* b) {
            const double fa = std::fabs(a->mean_te), fb = std::fabs(b->mean_te);
            return fa != fb ? fa > fb : a->node < b->node;
        });
        const std::size_t n = fraction_count(fraction, ranked.size());
        for (std::size_t i = 0; i < n; ++i) out.push_back(make_path_group(net, l, ranked[i]->node, gl.targets));
    }
    return out;
}

std::vector<PathGroup> random_noncritical_groups(const NetworkSpec& net, const CausalGraph& g, double fraction,
                                                 Rng& rng) {
    std::vector<PathGroup> out;
    for (std::size_t l = 1; l < g.layer_count(); ++l) {
        const auto& gl = g.layer(l);
        if (!gl.evaluated || gl.critical.empty()) continue;
        const auto crit = gl.critical_nodes();
        std::vector<std::size_t> pool;
        for (std::size_t j = 0; j < net.node_count(l); ++j) {
            if (!std::binary_search(crit.begin(), crit.end(), j)) pool.push_back(j);
        }
        const std::size_t n = std::min(fraction_count(fraction, crit.size()), pool.size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto pick = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool.size() - i));
            std::swap(pool[i], pool[std::min(pick, pool.size() - 1)]);
            out.push_back(make_path_group(net, l, pool[i], gl.targets));
        }
    }
    return out;
}

NetworkView mask_groups(const NetworkView& net, const std::vector<PathGroup>& groups) {
    return apply_all(net, groups, 0.0);
}

FidelityResult fidelity_curve(const NetworkView& net, const CausalGraph& g, const LabeledDataset& X_k, std::size_t k,
                              const std::vector<double>& fractions, std::size_t random_draws, std::uint64_t seed) {
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "fidelity fractions must lie in (0, 1], got " + std::to_string(f));
        }
    }
    FidelityResult res;
    res.unmasked_accuracy = class_accuracy(net, X_k, k);
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
        FidelityPoint pt;
        pt.fraction = fractions[fi];
        const auto groups = top_critical_groups(net.base(), g, pt.fraction);
        pt.masked_count = groups.size();
        pt.accuracy = class_accuracy(mask_groups(net, groups), X_k, k);
        pt.random_accuracy = pt.accuracy;
        if (random_draws > 0) {
            double s = 0.0;
            for (std::size_t draw = 0; draw < random_draws; ++draw) {
                Rng rng = Rng::stream(seed, (static_cast<std::uint64_t>(fi) << 32) | draw);
                s += class_accuracy(mask_groups(net, random_noncritical_groups(net.base(), g, pt.fraction, rng)), X_k, k);
            }
            pt.random_accuracy = s / static_cast<double>(random_draws);
        }
        res.points.push_back(pt);
    }
    return res;
}

std::vector<RepairRow> repair_eval(const NetworkView& net, const NoisyRegistry& d, const LabeledDataset& X,
                                   std::size_t k, const std::vector<double>& fractions) {
    for (double f : fractions) check_unit_range(f, "repair");
    const LabeledDataset X_k = filter_by_class(X, k, net.base().num_classes());
    const auto base_pred = argmax_rows(forward(net, X_k.images));
    std::vector<std::size_t> easy, hard;
    for (std::size_t i = 0; i < base_pred.size(); ++i) (base_pred[i] == k ? easy : hard).push_back(i);

    std::vector<RepairRow> rows;
    for (double f : fractions) {
        std::vector<PathGroup> groups;
        for (const auto& entry : d.layers) {
            std::vector<const NodeDecision*> ranked;
            for (const auto& nd : entry.noisy) ranked.push_back(&nd);
            std::stable_sort(ranked.begin(), ranked.end(), [](const NodeDecision* a, const NodeDecision* b) {
                return a->mean_te != b->mean_te ? a->mean_te > b->mean_te : a->node < b->node;
            });
            const std::size_t n = fraction_count(f, ranked.size());
            for (std::size_t i = 0; i < n; ++i) {
                groups.push_back(make_path_group(net.base(), entry.layer, ranked[i]->node, entry.targets));
            }
        }
        const auto pred = argmax_rows(forward(mask_groups(net, groups), X_k.images));
        for (const auto& [name, idx] : {std::pair{"easy", &easy}, std::pair{"hard", &hard}}) {
            if (idx->empty()) continue;
            std::size_t hits = 0;
            for (std::size_t i : *idx) hits += pred[i] == k;
            rows.push_back({f, name, idx->size(), static_cast<double>(hits) / static_cast<double>(idx->size()),
                            groups.size()});
        }
    }
    return rows;
}

MetricReport make_report(std::string metric, std::vector<std::string> keys, std::vector<double> scores,
                         nlohmann::json config) {
    if (keys.size() != scores.size()) throw Error(ErrorCode::Invariant, "report keys and scores differ in length");
    MetricReport r;
    r.metric = std::move(metric);
    r.keys = std::move(keys);
    r.scores = std::move(scores);
    r.config = std::move(config);
    if (!r.scores.empty()) {
        double s = 0.0;
        for (double v : r.scores) s += v;
        r.mean = s / static_cast<double>(r.scores.size());
        double ss = 0.0;
        for (double v : r.scores) ss += (v - r.mean) * (v - r.mean);
        r.variance = ss / static_cast<double>(r.scores.size());
    }
    return r;
}

nlohmann::json report_to_json(const MetricReport& r) {
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t i = 0; i < r.scores.size(); ++i) scores.push_back({{"key", r.keys[i]}, {"score", r.scores[i]}});
    nlohmann::json j = {{"metric", r.metric}, {"count", r.scores.size()}, {"mean", r.mean},
                        {"variance", r.variance}, {"config", r.config}, {"scores", scores}};
    if (!r.details.is_null()) j["details"] = r.details;
    return j;
}

std::string report_to_csv(const MetricReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "key," << r.metric << "\n";
    for (std::size_t i = 0; i < r.scores.size(); ++i) out << r.keys[i] << "," << r.scores[i] << "\n";
    return out.str();
}

nlohmann::json fidelity_to_json(const FidelityResult& f) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : f.points) {
        pts.push_back({{"fraction", p.fraction},
                       {"accuracy", p.accuracy},
                       {"masked_count", p.masked_count},
                       {"random_accuracy", p.random_accuracy}});
    }
    return {{"unmasked_accuracy", f.unmasked_accuracy}, {"points", pts}};
}

nlohmann::json repair_to_json(const std::vector<RepairRow>& rows) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rows) {
        a.push_back({{"fraction", r.fraction}, {"split", r.split}, {"size", r.size}, {"accuracy", r.accuracy},
                     {"masked_count", r.masked_count}});
    }
    return a;
}

std::vector<double> per_sample(std::size_t n, const std::function<double(std::size_t)>& fn) {
    std::vector<double> out(n, 0.0);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        try {
            out[static_cast<std::size_t>(i)] = fn(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(ceg_per_sample_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

std::vector<double> parse_fractions(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
        if (item.empty() || used != item.size()) throw Error(ErrorCode::InvalidArgument, "bad fraction '" + item + "'");
        check_unit_range(v, "listed");
        out.push_back(v);
    }
    if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty fraction list");
    return out;
}

}  // namespace ceg
