#include "ceg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "ceg/error.hpp"

namespace ceg {

using nlohmann::json;

std::vector<std::size_t> GraphLayer::critical_nodes() const {
    std::vector<std::size_t> out;
    for (const auto& d : critical) out.push_back(d.node);
    return out;
}

std::vector<std::size_t> GraphLayer::noisy_nodes() const {
    std::vector<std::size_t> out;
    for (const auto& d : noisy) out.push_back(d.node);
    return out;
}

const GraphLayer& CausalGraph::layer(std::size_t l) const {
    if (l == 0 || l > layers.size()) {
        throw Error(ErrorCode::InvalidLayer, "graph has no layer " + std::to_string(l));
    }
    return layers[l - 1];
}

std::size_t CausalGraph::critical_count() const {
    std::size_t n = 0;
    for (std::size_t l = 1; l < layers.size(); ++l) n += layers[l - 1].critical.size();
    return n;
}

std::size_t NoisyRegistry::noisy_count() const {
    std::size_t n = 0;
    for (const auto& e : layers) n += e.noisy.size();
    return n;
}

GraphInference infer_graph(const NetworkView& net, const LabeledDataset& X_k, std::size_t k,
                           const InterventionPolicy& policy, const TestConfig& cfg, std::uint64_t seed) {
    if (X_k.size() == 0) throw Error(ErrorCode::EmptyClass, "no inputs for class " + std::to_string(k));
    return infer_graph(net, make_baseline(net, X_k.images), k, policy, cfg, seed);
}

GraphInference infer_graph(const NetworkView& net, const Baseline& baseline, std::size_t k,
                           const InterventionPolicy& policy, const TestConfig& cfg, std::uint64_t seed) {
    const NetworkSpec& base = net.base();
    if (baseline.size() == 0) throw Error(ErrorCode::EmptyClass, "no inputs for class " + std::to_string(k));
    if (k >= base.num_classes()) throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(k) + " out of range");
    policy.validate();
    cfg.validate();

    const std::size_t L = base.graph_layer_count();
    GraphInference out;
    CausalGraph& g = out.graph;
    g.class_id = k;
    g.alpha = cfg.alpha;
    g.policy = policy;
    g.seed = seed;
    double sum = 0.0;
    for (std::size_t i = 0; i < baseline.size(); ++i) sum += baseline.logits.data[i * base.num_classes() + k];
    g.baseline_mean_logit = sum / static_cast<double>(baseline.size());

    g.layers.resize(L);
    for (std::size_t l = 1; l <= L; ++l) {
        g.layers[l - 1].layer = l;
        g.layers[l - 1].name = base.graph_layer(l).name;
    }
    GraphLayer& seed_layer = g.layers[L - 1];
    seed_layer.evaluated = true;
    seed_layer.targets = {k};
    NodeDecision seed_node;
    seed_node.node = k;
    seed_node.kind = NodeKind::Critical;
    seed_node.p = 0.0;
    seed_layer.critical = {seed_node};

    std::atomic<std::size_t> evaluations{0};
    std::vector<std::size_t> targets = {k};
    for (std::size_t l = L - 1; l >= 1; --l) {
        if (targets.empty()) break;
        GraphLayer& gl = g.layers[l - 1];
        gl.evaluated = true;
        gl.targets = targets;
        gl.decisions = classify_layer(net, l, targets, baseline, k, policy, cfg, seed, &evaluations);
        for (const auto& d : gl.decisions) {
            if (d.kind == NodeKind::Critical) gl.critical.push_back(d);
            if (d.kind == NodeKind::Noisy) gl.noisy.push_back(d);
        }
        out.noisy.layers.push_back({l, gl.targets, gl.noisy});
        targets = gl.critical_nodes();
    }
    out.te_evaluations = evaluations.load();
    return out;
}

void check_graph(const NetworkSpec& net, const CausalGraph& g, const NoisyRegistry& d) {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::Invariant, why); };
    const std::size_t L = net.graph_layer_count();
    if (g.layers.size() != L) fail("graph has " + std::to_string(g.layers.size()) + " layers, network " + std::to_string(L));
    const auto& top = g.layer(L);
    if (top.critical_nodes() != std::vector<std::size_t>{g.class_id}) fail("seed layer must hold exactly the class node");
    for (std::size_t l = 1; l < L; ++l) {
        const auto& gl = g.layer(l);
        const auto& above = g.layer(l + 1);
        if (!gl.evaluated) {
            if (!gl.critical.empty() || !gl.noisy.empty()) fail("unevaluated layer " + std::to_string(l) + " has nodes");
            continue;
        }
        if (!above.evaluated) fail("layer " + std::to_string(l) + " evaluated below an unevaluated layer");
        if (gl.targets != above.critical_nodes()) fail("targets of layer " + std::to_string(l) + " are not J^(l+1)");
        std::set<std::size_t> seen;
        for (const auto& n : gl.critical) {
            if (n.node >= net.node_count(l)) fail("critical node out of range in layer " + std::to_string(l));
            seen.insert(n.node);
        }
        for (const auto& n : gl.noisy) {
            if (n.node >= net.node_count(l)) fail("noisy node out of range in layer " + std::to_string(l));
            if (seen.count(n.node)) fail("node " + std::to_string(n.node) + " both critical and noisy");
        }
        for (std::size_t t : gl.targets) {
            if (t >= net.node_count(l + 1)) fail("edge target out of range in layer " + std::to_string(l + 1));
        }
    }
    for (const auto& e : d.layers) {
        if (e.layer == 0 || e.layer >= L || g.layer(e.layer).noisy_nodes() != [&] {
                std::vector<std::size_t> v;
                for (const auto& n : e.noisy) v.push_back(n.node);
                return v;
            }()) {
            fail("noisy registry disagrees with graph at layer " + std::to_string(e.layer));
        }
    }
}

double StabilityReport::share_at_least(double threshold) const {
    if (nodes.empty()) return 1.0;
    const auto hits = std::count_if(nodes.begin(), nodes.end(), [&](const auto& n) { return n.frequency >= threshold; });
    return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

std::vector<double> stability_schedule(std::size_t runs, double lo, double hi) {
    if (runs < 10) throw Error(ErrorCode::InvalidArgument, "stability study needs at least 10 runs");
    if (!(lo > 0.0 && lo < hi && hi < 1.0)) throw Error(ErrorCode::InvalidArgument, "b range must satisfy 0 < lo < hi < 1");
    const std::size_t steps = (runs + 9) / 10;
    std::vector<double> out(runs);
    for (std::size_t r = 0; r < runs; ++r) {
        const std::size_t s = r / 10;
        out[r] = lo + (hi - lo) * (static_cast<double>(s) + 0.5) / static_cast<double>(steps);
    }
    return out;
}

StabilityReport stability_study(const NetworkView& net, const LabeledDataset& X_k, std::size_t k, std::size_t runs,
                                double b_lo, double b_hi, const TestConfig& cfg, std::uint64_t seed, double epsilon) {
    if (X_k.size() == 0) throw Error(ErrorCode::EmptyClass, "no inputs for class " + std::to_string(k));
    StabilityReport report;
    report.runs = runs;
    report.class_id = k;
    report.b_lo = b_lo;
    report.b_hi = b_hi;
    report.epsilon = epsilon;
    report.seed = seed;
    report.b_schedule = stability_schedule(runs, b_lo, b_hi);
    for (double b : report.b_schedule) InterventionPolicy::continuous(b, epsilon);

    const Baseline baseline = make_baseline(net, X_k.images);
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> per_run(runs);
    std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t r = 0; r < static_cast<std::int64_t>(runs); ++r) {
        try {
            const auto run = static_cast<std::size_t>(r);
            const auto policy = InterventionPolicy::continuous(report.b_schedule[run], epsilon);
            const auto inferred = infer_graph(net, baseline, k, policy, cfg, seed + run);
            for (std::size_t l = 1; l < inferred.graph.layer_count(); ++l) {
                for (std::size_t node : inferred.graph.layer(l).critical_nodes()) per_run[run].emplace_back(l, node);
            }
        } catch (...) {
#pragma omp critical(ceg_stability_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
    for (const auto& run : per_run) {
        for (const auto& key : run) ++counts[key];
    }
    report.histogram.assign(10, 0);
    for (const auto& [key, count] : counts) {
        NodeFrequency f;
        f.layer = key.first;
        f.node = key.second;
        f.appearances = count;
        f.frequency = static_cast<double>(count) / static_cast<double>(runs);
        report.nodes.push_back(f);
        ++report.histogram[std::min<std::size_t>(9, static_cast<std::size_t>(f.frequency * 10.0))];
    }
    return report;
}

namespace {

json number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

json decision_to_json(const NodeDecision& d) {
    return {{"node", d.node}, {"mean_te", d.mean_te}, {"std_te", d.std_te}, {"z", number_or_null(d.z)}, {"p", d.p}};
}

NodeDecision decision_from_json(const json& j, NodeKind kind) {
    NodeDecision d;
    d.node = j.at("node").get<std::size_t>();
    d.mean_te = j.at("mean_te").get<double>();
    d.std_te = j.at("std_te").get<double>();
    d.p = j.at("p").get<double>();
    d.z = j.at("z").is_null() ? std::copysign(std::numeric_limits<double>::infinity(), d.mean_te)
                              : j.at("z").get<double>();
    d.kind = kind;
    return d;
}

json policy_to_json(const InterventionPolicy& p) {
    json j = {{"mode", to_string(p.mode)}};
    if (p.mode == InterventionMode::Continuous) {
        j["b"] = p.b;
        j["epsilon"] = p.epsilon;
    }
    return j;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string dot_id(std::size_t l, std::size_t node) {
    return "n" + std::to_string(l) + "_" + std::to_string(node);
}

}  // namespace

json graph_to_json(const CausalGraph& g, const NoisyRegistry& d) {
    json layers = json::array();
    for (const auto& gl : g.layers) {
        json critical = json::array(), noisy = json::array();
        for (const auto& n : gl.critical) critical.push_back(decision_to_json(n));
        for (const auto& n : gl.noisy) noisy.push_back(decision_to_json(n));
        layers.push_back({{"layer", gl.layer},
                          {"name", gl.name},
                          {"evaluated", gl.evaluated},
                          {"critical", critical},
                          {"noisy", noisy},
                          {"targets", gl.targets}});
    }
    (void)d;  // noisy nodes are carried per layer
    return {{"class_id", g.class_id},
            {"alpha", g.alpha},
            {"policy", policy_to_json(g.policy)},
            {"seed", g.seed},
            {"baseline_mean_logit", g.baseline_mean_logit},
            {"layers", layers}};
}

std::pair<CausalGraph, NoisyRegistry> graph_from_json(const json& j) {
    try {
        CausalGraph g;
        g.class_id = j.at("class_id").get<std::size_t>();
        g.alpha = j.at("alpha").get<double>();
        const auto& jp = j.at("policy");
        const auto mode = jp.at("mode").get<std::string>();
        if (mode == "binary") {
            g.policy = InterventionPolicy::binary();
        } else if (mode == "continuous") {
            g.policy = InterventionPolicy::continuous(jp.at("b").get<double>(), jp.at("epsilon").get<double>());
        } else {
            throw Error(ErrorCode::MalformedHeader, "unknown policy mode '" + mode + "'");
        }
        g.seed = j.value("seed", std::uint64_t{0});
        g.baseline_mean_logit = j.value("baseline_mean_logit", 0.0);
        NoisyRegistry d;
        for (const auto& jl : j.at("layers")) {
            GraphLayer gl;
            gl.layer = jl.at("layer").get<std::size_t>();
            gl.name = jl.value("name", std::string{});
            gl.evaluated = jl.value("evaluated", true);
            gl.targets = jl.at("targets").get<std::vector<std::size_t>>();
            for (const auto& n : jl.at("critical")) gl.critical.push_back(decision_from_json(n, NodeKind::Critical));
            for (const auto& n : jl.at("noisy")) gl.noisy.push_back(decision_from_json(n, NodeKind::Noisy));
            g.layers.push_back(std::move(gl));
        }
        // registry in inference order: top-down, evaluated, below the seed
        for (std::size_t l = g.layers.size(); l-- > 1;) {
            const auto& gl = g.layers[l - 1];
            if (gl.evaluated) d.layers.push_back({gl.layer, gl.targets, gl.noisy});
        }
        return {std::move(g), std::move(d)};
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("graph JSON: ") + e.what());
    }
}

std::string graph_to_dot(const CausalGraph& g, const NoisyRegistry& d) {
    (void)d;
    std::ostringstream out;
    out << "digraph causal_graph_class_" << g.class_id << " {\n";
    out << "  rankdir=BT;\n";
    out << "  node [shape=circle, fontsize=10];\n";
    for (const auto& gl : g.layers) {
        out << "  subgraph cluster_l" << gl.layer << " {\n";
        out << "    label=\"" << gl.name << " (l=" << gl.layer << ")\";\n";
        for (const auto& n : gl.critical) {
            out << "    " << dot_id(gl.layer, n.node) << " [label=\"" << n.node
                << "\", style=filled, fillcolor=\"#d62728\", fontcolor=white];\n";
        }
        for (const auto& n : gl.noisy) {
            out << "    " << dot_id(gl.layer, n.node) << " [label=\"" << n.node << "\", style=dashed];\n";
        }
        if (gl.critical.empty() && gl.noisy.empty()) {
            out << "    " << "empty_l" << gl.layer << " [label=\"\", shape=point, style=invis];\n";
        }
        out << "  }\n";
    }
    for (const auto& gl : g.layers) {
        if (gl.layer == g.layers.size()) continue;
        for (const auto& n : gl.critical) {
            for (std::size_t t : gl.targets) {
                out << "  " << dot_id(gl.layer, n.node) << " -> " << dot_id(gl.layer + 1, t) << ";\n";
            }
        }
    }
    out << "}\n";
    return out.str();
}

std::string ate_heatmap_csv(const NetworkSpec& net, const CausalGraph& g) {
    const std::size_t L = net.graph_layer_count();
    std::size_t rows = 0;
    for (std::size_t l = 1; l < L; ++l) rows = std::max(rows, net.node_count(l));
    const double scale = g.baseline_mean_logit != 0.0 ? std::fabs(g.baseline_mean_logit) : 1.0;

    std::ostringstream out;
    out << "node";
    for (std::size_t l = 1; l < L; ++l) out << "," << net.graph_layer(l).name;
    out << "\n";
    for (std::size_t r = 0; r < rows; ++r) {
        out << r;
        for (std::size_t l = 1; l < L; ++l) {
            out << ",";
            const auto& decisions = g.layer(l).decisions;
            if (r < decisions.size()) out << fmt_double(decisions[r].mean_te / scale);
        }
        out << "\n";
    }
    return out.str();
}

json stability_to_json(const StabilityReport& r) {
    json nodes = json::array();
    for (const auto& n : r.nodes) {
        nodes.push_back({{"layer", n.layer}, {"node", n.node}, {"appearances", n.appearances}, {"frequency", n.frequency}});
    }
    std::vector<double> distinct_b;
    for (double b : r.b_schedule) {
        if (distinct_b.empty() || distinct_b.back() != b) distinct_b.push_back(b);
    }
    return {{"runs", r.runs},
            {"class_id", r.class_id},
            {"b_range", {r.b_lo, r.b_hi}},
            {"epsilon", r.epsilon},
            {"seed", r.seed},
            {"b_schedule", {{"values", distinct_b}, {"runs_per_value", 10}}},
            {"nodes", nodes},
            {"histogram", r.histogram},
            {"share_frequency_ge_0_95", r.share_at_least(0.95)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error(ErrorCode::Io, "short write to '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void export_graph(const CausalGraph& g, const NoisyRegistry& d, GraphFormat format, const std::filesystem::path& path,
                  const json& meta) {
    if (format == GraphFormat::Json) {
        json j = graph_to_json(g, d);
        if (!meta.empty()) j["meta"] = meta;
        write_text(path, j.dump(1) + "\n");
    } else {
        write_text(path, graph_to_dot(g, d));
    }
}

}  // namespace ceg
