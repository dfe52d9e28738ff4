#include "cli.hpp"

#include <omp.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "ceg/error.hpp"
#include "ceg/metrics.hpp"
#include "ceg/model_io.hpp"

namespace ceg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

void require_file(const std::string& path, const char* flag) {
    if (path.empty()) throw Error(ErrorCode::InvalidArgument, std::string(flag) + " is required");
    if (!fs::is_regular_file(path)) throw Error(ErrorCode::Io, "no such file '" + path + "' (" + flag + ")");
}

LabeledDataset load_data(const NetworkSpec& net, const std::string& images, const std::string& labels) {
    const auto& pre = net.preprocess();
    LabeledDataset ds = load_idx(images, labels, pre ? pre->divide : 255.0);
    if (ds.size() > 0) standardize(net, ds.images);
    return ds;
}

InterventionPolicy policy_of(const RunConfig& cfg) {
    if (cfg.beta_mode == "binary") return InterventionPolicy::binary();
    if (cfg.beta_mode == "continuous") return InterventionPolicy::continuous(cfg.beta_b, cfg.beta_eps);
    throw Error(ErrorCode::InvalidArgument, "--beta-mode must be binary or continuous, got '" + cfg.beta_mode + "'");
}

TestConfig test_of(const RunConfig& cfg) {
    TestConfig t{cfg.alpha, cfg.min_samples};
    t.validate();
    return t;
}

std::size_t class_of(const RunConfig& cfg, const NetworkSpec& net) {
    if (!cfg.class_id) throw Error(ErrorCode::InvalidArgument, "--class is required");
    if (*cfg.class_id >= net.num_classes()) {
        throw Error(ErrorCode::InvalidArgument, "--class " + std::to_string(*cfg.class_id) + " out of range [0, " +
                                                    std::to_string(net.num_classes()) + ")");
    }
    return *cfg.class_id;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(1) + "\n"); }

fs::path out_dir(const RunConfig& cfg) {
    fs::path dir(cfg.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create output directory '" + cfg.out + "'");
    return dir;
}

// Graphs for each requested class, inferred from the validation slice.
std::map<std::size_t, GraphInference> infer_graphs(const RunConfig& cfg, const NetworkSpec& net,
                                                   const LabeledDataset& val, const std::vector<std::size_t>& classes) {
    std::map<std::size_t, GraphInference> out;
    for (std::size_t k : classes) {
        out.emplace(k, infer_graph(net, filter_by_class(val, k, net.num_classes()), k, policy_of(cfg), test_of(cfg),
                                   cfg.seed));
    }
    return out;
}

int cmd_predict(const RunConfig& cfg, std::ostream& out) {
    require_file(cfg.model, "--model");
    require_file(cfg.images, "--images");
    require_file(cfg.labels, "--labels");
    const NetworkSpec net = load_model(cfg.model);
    const LabeledDataset ds = load_data(net, cfg.images, cfg.labels);
    if (ds.size() == 0) throw Error(ErrorCode::EmptyClass, "dataset '" + cfg.images + "' has no samples");
    const auto pred = argmax_rows(forward(net, ds.images));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == ds.labels[i];
    const double acc = static_cast<double>(hits) / static_cast<double>(pred.size());
    out << "accuracy " << acc << " (" << hits << "/" << pred.size() << ")\n";
    return kExitOk;
}

int cmd_graph(const RunConfig& cfg, std::ostream& out) {
    require_file(cfg.model, "--model");
    require_file(cfg.images, "--images");
    require_file(cfg.labels, "--labels");
    const NetworkSpec net = load_model(cfg.model);
    const std::size_t k = class_of(cfg, net);
    const auto policy = policy_of(cfg);
    const auto tcfg = test_of(cfg);
    const LabeledDataset X_k = filter_by_class(load_data(net, cfg.images, cfg.labels), k, net.num_classes());
    const auto inferred = infer_graph(net, X_k, k, policy, tcfg, cfg.seed);
    check_graph(net, inferred.graph, inferred.noisy);

    const fs::path dir = out_dir(cfg);
    const json meta = make_meta(cfg);
    export_graph(inferred.graph, inferred.noisy, GraphFormat::Json, dir / "graph.json", meta);
    write_text(dir / "graph.dot", "// meta " + meta.dump() + "\n" + graph_to_dot(inferred.graph, inferred.noisy));
    write_text(dir / "ate_heatmap.csv", "# meta " + meta.dump() + "\n" + ate_heatmap_csv(net, inferred.graph));
    out << "class " << k << ": " << inferred.graph.critical_count() << " critical, " << inferred.noisy.noisy_count()
        << " noisy, " << inferred.te_evaluations << " TE evaluations\n";
    return kExitOk;
}

int cmd_stability(const RunConfig& cfg, std::ostream& out) {
    if (cfg.runs < 10) throw Error(ErrorCode::InvalidArgument, "--runs must be at least 10, got " + std::to_string(cfg.runs));
    require_file(cfg.model, "--model");
    require_file(cfg.images, "--images");
    require_file(cfg.labels, "--labels");
    const NetworkSpec net = load_model(cfg.model);
    const std::size_t k = class_of(cfg, net);
    const auto tcfg = test_of(cfg);
    const LabeledDataset X_k = filter_by_class(load_data(net, cfg.images, cfg.labels), k, net.num_classes());
    const auto report = stability_study(net, X_k, k, cfg.runs, cfg.b_lo, cfg.b_hi, tcfg, cfg.seed, cfg.beta_eps);
    json j = stability_to_json(report);
    j["meta"] = make_meta(cfg);
    write_json(out_dir(cfg) / "stability_report.json", j);
    out << "class " << k << ": " << report.nodes.size() << " nodes, share with frequency >= 0.95: "
        << report.share_at_least(0.95) << "\n";
    return kExitOk;
}

// A graph file must describe this network; a mismatch is bad input.
std::pair<CausalGraph, NoisyRegistry> load_graph_file(const std::string& path, const NetworkSpec& net) {
    auto loaded = graph_from_json(json::parse(read_text(path), nullptr, true));
    try {
        check_graph(net, loaded.first, loaded.second);
    } catch (const Error& e) {
        throw Error(ErrorCode::MalformedHeader, "'" + path + "' does not match the model: " + e.what());
    }
    return loaded;
}

int cmd_explain(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    require_file(cfg.model, "--model");
    require_file(cfg.images, "--images");
    require_file(cfg.labels, "--labels");
    const NetworkSpec net = load_model(cfg.model);
    const LabeledDataset ds = load_data(net, cfg.images, cfg.labels);
    if (cfg.index >= ds.size()) {
        throw Error(ErrorCode::InvalidArgument, "--index " + std::to_string(cfg.index) + " out of range for " +
                                                    std::to_string(ds.size()) + " samples");
    }
    const Tensor x = ds.sample(cfg.index);
    const std::size_t l = cfg.layer.value_or(default_explain_layer(net));

    SaliencyMap map;
    json extra = json::object();
    std::size_t k = cfg.class_id ? class_of(cfg, net) : ds.labels[cfg.index];
    if (cfg.explainer == "causal") {
        CausalGraph g;
        if (!cfg.graph.empty()) {
            require_file(cfg.graph, "--graph");
            g = load_graph_file(cfg.graph, net).first;
            if (cfg.class_id && *cfg.class_id != g.class_id) {
                throw Error(ErrorCode::InvalidArgument, "--class differs from the class of --graph");
            }
            k = g.class_id;
        } else {
            require_file(cfg.val_images, "--val-images");
            require_file(cfg.val_labels, "--val-labels");
            const LabeledDataset val = load_data(net, cfg.val_images, cfg.val_labels);
            g = infer_graphs(cfg, net, val, {k}).at(k).graph;
        }
        map = aggregate_saliency(net, x, g, l);
        json top1 = json::array();
        for (const auto& f : top1_filter_response(net, x, g, l)) {
            top1.push_back({{"parent", f.parent}, {"child", f.child}, {"degenerate", f.map.degenerate},
                            {"peaks", peaks_to_json(f.peaks)}});
        }
        extra["top1_filters"] = top1;
    } else if (cfg.explainer == "occlusion") {
        map = occlusion_baseline(net, x, k, cfg.patch, cfg.stride);
    } else if (cfg.explainer == "random") {
        map = random_explainer(net, cfg.seed)(x, k);
    } else {
        throw Error(ErrorCode::InvalidArgument, "--explainer must be causal, occlusion or random");
    }
    if (map.degenerate) err << "warning: " << map.source << " map is constant; wrote an all-zero map\n";

    const fs::path dir = out_dir(cfg);
    const json meta = make_meta(cfg);
    write_pgm16(map, dir / "saliency.pgm", {"meta " + meta.dump()});
    write_text(dir / "saliency.csv", "# meta " + meta.dump() + "\n" + saliency_csv(map));
    json j = {{"class_id", k}, {"index", cfg.index}, {"layer", l}, {"source", map.source},
              {"degenerate", map.degenerate}, {"peaks", peaks_to_json(find_peaks(map))}};
    j.update(extra);
    j["meta"] = meta;
    write_json(dir / "peaks.json", j);
    out << "explained sample " << cfg.index << " for class " << k << " (" << map.source << ")\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    require_file(cfg.model, "--model");
    require_file(cfg.images, "--images");
    require_file(cfg.labels, "--labels");
    const NetworkSpec net = load_model(cfg.model);
    const LabeledDataset test = load_data(net, cfg.images, cfg.labels);
    if (test.size() == 0) throw Error(ErrorCode::EmptyClass, "dataset '" + cfg.images + "' has no samples");
    const std::size_t C = net.num_classes();

    std::vector<std::size_t> classes;
    if (cfg.class_id) {
        classes.push_back(class_of(cfg, net));
    } else {
        for (std::size_t k = 0; k < C; ++k) classes.push_back(k);
    }
    const bool sample_metric = cfg.metric == "irof" || cfg.metric == "le";
    if (!sample_metric && cfg.metric != "fidelity" && cfg.metric != "repair") {
        throw Error(ErrorCode::InvalidArgument, "--metric must be irof, le, fidelity or repair");
    }
    const bool needs_graphs = !sample_metric || cfg.explainer == "causal";
    const std::vector<double> fractions = sample_metric ? std::vector<double>{} : parse_fractions(cfg.fractions);

    std::map<std::size_t, GraphInference> inferred;
    if (needs_graphs) {
        if (!cfg.graph.empty()) {
            require_file(cfg.graph, "--graph");
            auto [g, d] = load_graph_file(cfg.graph, net);
            if (cfg.class_id && *cfg.class_id != g.class_id) {
                throw Error(ErrorCode::InvalidArgument, "--class differs from the class of --graph");
            }
            classes = {g.class_id};
            inferred.emplace(g.class_id, GraphInference{std::move(g), std::move(d), 0});
        } else {
            require_file(cfg.val_images, "--val-images");
            require_file(cfg.val_labels, "--val-labels");
            inferred = infer_graphs(cfg, net, load_data(net, cfg.val_images, cfg.val_labels), classes);
        }
    }

    std::vector<std::string> keys;
    std::vector<double> scores;
    json details;
    json mcfg = {{"metric", cfg.metric}, {"seed", cfg.seed}};

    if (sample_metric) {
        LabeledDataset pool = test;
        if (classes.size() == 1) pool = filter_by_class(test, classes.front(), C);
        const LabeledDataset sub = take(pool, cfg.samples);
        std::map<std::size_t, CausalGraph> graphs;
        for (const auto& [k, gi] : inferred) graphs.emplace(k, gi.graph);
        const std::size_t l = cfg.layer.value_or(default_explain_layer(net));
        Explainer e;
        if (cfg.explainer == "causal") {
            e = causal_explainer(net, graphs, l);
        } else if (cfg.explainer == "occlusion") {
            e = occlusion_explainer(net, cfg.patch, cfg.stride);
        } else if (cfg.explainer == "random") {
            e = random_explainer(net, cfg.seed);
        } else {
            throw Error(ErrorCode::InvalidArgument, "--explainer must be causal, occlusion or random");
        }
        mcfg["explainer"] = e.name;
        mcfg["samples"] = sub.size();
        if (cfg.metric == "le") {
            mcfg["noise_sigma"] = cfg.noise_sigma > 0.0 ? json(cfg.noise_sigma) : json("0.1 * input range");
            mcfg["runs"] = cfg.le_runs;
            scores = per_sample(sub.size(), [&](std::size_t i) {
                const Tensor x = sub.sample(i);
                const double sigma = cfg.noise_sigma > 0.0 ? cfg.noise_sigma : default_noise_sigma(x);
                return lipschitz_estimate(e, x, sub.labels[i], sigma, cfg.le_runs, cfg.seed + i);
            });
        } else {
            mcfg["grid"] = cfg.grid;
            scores = per_sample(sub.size(), [&](std::size_t i) { return irof(net, e, sub.sample(i), sub.labels[i], cfg.grid); });
        }
        for (std::size_t i = 0; i < sub.size(); ++i) keys.push_back("sample_" + std::to_string(i));
    } else if (cfg.metric == "fidelity") {
        mcfg["fractions"] = fractions;
        mcfg["random_draws"] = cfg.random_draws;
        details = json::object();
        for (std::size_t k : classes) {
            const auto f = fidelity_curve(net, inferred.at(k).graph, filter_by_class(test, k, C), k, fractions,
                                          cfg.random_draws, cfg.seed);
            details[std::to_string(k)] = fidelity_to_json(f);
            for (const auto& p : f.points) {
                keys.push_back("class_" + std::to_string(k) + "_fraction_" + json(p.fraction).dump());
                scores.push_back(p.accuracy);
            }
        }
    } else {
        mcfg["fractions"] = fractions;
        details = json::object();
        for (std::size_t k : classes) {
            const auto rows = repair_eval(net, inferred.at(k).noisy, test, k, fractions);
            details[std::to_string(k)] = repair_to_json(rows);
            for (const auto& r : rows) {
                keys.push_back("class_" + std::to_string(k) + "_" + r.split + "_fraction_" + json(r.fraction).dump());
                scores.push_back(r.accuracy);
            }
        }
    }

    MetricReport report = make_report(cfg.metric, std::move(keys), std::move(scores), mcfg);
    report.details = details;
    const fs::path dir = out_dir(cfg);
    const json meta = make_meta(cfg);
    json j = report_to_json(report);
    j["meta"] = meta;
    write_json(dir / (cfg.metric + "_report.json"), j);
    write_text(dir / (cfg.metric + "_report.csv"), "# meta " + meta.dump() + "\n" + report_to_csv(report));
    out << cfg.metric << ": mean " << report.mean << ", variance " << report.variance << " over "
        << report.scores.size() << " scores\n";
    return kExitOk;
}

int dispatch(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (cfg.command == "predict") return cmd_predict(cfg, out);
    if (cfg.command == "graph") return cmd_graph(cfg, out);
    if (cfg.command == "stability") return cmd_stability(cfg, out);
    if (cfg.command == "explain") return cmd_explain(cfg, out, err);
    if (cfg.command == "eval") return cmd_eval(cfg, out);
    throw Error(ErrorCode::InvalidArgument, "unknown command '" + cfg.command + "'");
}

}  // namespace

json RunConfig::to_json() const {
    json j = {{"command", command}, {"model", model}, {"images", images}, {"labels", labels}, {"out", out},
              {"seed", seed}};
    auto policy = [&] {
        j["class"] = opt(class_id);
        j["alpha"] = alpha;
        j["min_samples"] = min_samples;
        j["beta_mode"] = beta_mode;
        j["beta_b"] = beta_b;
        j["beta_eps"] = beta_eps;
    };
    if (command == "graph") {
        policy();
    } else if (command == "stability") {
        policy();
        j["runs"] = runs;
        j["b_lo"] = b_lo;
        j["b_hi"] = b_hi;
        j.erase("beta_mode");
        j.erase("beta_b");
    } else if (command == "explain" || command == "eval") {
        policy();
        j["graph"] = graph;
        j["val_images"] = val_images;
        j["val_labels"] = val_labels;
        j["layer"] = opt(layer);
        j["explainer"] = explainer;
        j["patch"] = patch;
        j["stride"] = stride;
        if (command == "explain") {
            j["index"] = index;
        } else {
            j["metric"] = metric;
            j["fractions"] = fractions;
            j["samples"] = samples;
            j["grid"] = grid;
            j["noise_sigma"] = noise_sigma;
            j["le_runs"] = le_runs;
            j["random_draws"] = random_draws;
        }
    }
    return j;
}

json make_meta(const RunConfig& cfg) {
    return {{"tool_version", CEG_VERSION}, {"config", cfg.to_json()}, {"seed", cfg.seed}};
}

bool apply_worker_env(std::ostream& err) {
    const char* v = std::getenv("CEG_NUM_WORKERS");
    if (!v || !*v) return true;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) {
        err << "error: CEG_NUM_WORKERS must be a positive integer, got '" << v << "'\n";
        return false;
    }
    omp_set_num_threads(static_cast<int>(n));
    return true;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    std::size_t class_id = 0, layer = 0;

    CLI::App app{"Causal explanatory graphs for feed-forward vision networks", "ceg"};
    app.set_version_flag("--version", std::string(CEG_VERSION));
    app.require_subcommand(1);

    auto common = [&](CLI::App* sub) {
        sub->add_option("--model", cfg.model, "CEGM model file")->required();
        sub->add_option("--images", cfg.images, "IDX image file")->required();
        sub->add_option("--labels", cfg.labels, "IDX label file")->required();
    };
    auto seeded = [&](CLI::App* sub) {
        sub->add_option("--seed", cfg.seed, "root random seed");
        sub->add_option("--out", cfg.out, "output directory");
    };
    auto testing = [&](CLI::App* sub) {
        sub->add_option("--class", class_id, "target class k");
        sub->add_option("--alpha", cfg.alpha, "significance level");
        sub->add_option("--min-samples", cfg.min_samples, "minimum samples per z-test");
        sub->add_option("--beta-eps", cfg.beta_eps, "half-width of the continuous beta range");
    };
    auto policy = [&](CLI::App* sub) {
        sub->add_option("--beta-mode", cfg.beta_mode, "binary or continuous")->check(CLI::IsMember({"binary", "continuous"}));
        sub->add_option("--beta-b", cfg.beta_b, "centre of the continuous beta range");
    };
    auto graphs = [&](CLI::App* sub) {
        sub->add_option("--graph", cfg.graph, "graph.json from the graph command");
        sub->add_option("--val-images", cfg.val_images, "IDX images the graphs are inferred from");
        sub->add_option("--val-labels", cfg.val_labels, "IDX labels the graphs are inferred from");
        sub->add_option("--layer", layer, "explanation layer l (maps l -> l+1)");
        sub->add_option("--explainer", cfg.explainer, "causal, occlusion or random")
            ->check(CLI::IsMember({"causal", "occlusion", "random"}));
        sub->add_option("--patch", cfg.patch, "occlusion patch size");
        sub->add_option("--stride", cfg.stride, "occlusion stride");
    };

    auto* predict = app.add_subcommand("predict", "top-1 accuracy of a model on a dataset");
    common(predict);

    auto* graph = app.add_subcommand("graph", "infer the causal graph of one class");
    common(graph);
    seeded(graph);
    testing(graph);
    policy(graph);

    auto* stability = app.add_subcommand("stability", "repeat graph inference over a range of b");
    common(stability);
    seeded(stability);
    testing(stability);
    stability->add_option("--runs", cfg.runs, "number of runs (>= 10)");
    stability->add_option("--b-lo", cfg.b_lo, "lower end of the b range");
    stability->add_option("--b-hi", cfg.b_hi, "upper end of the b range");

    auto* explain = app.add_subcommand("explain", "saliency map and peaks for one input");
    common(explain);
    seeded(explain);
    testing(explain);
    policy(explain);
    graphs(explain);
    explain->add_option("--index", cfg.index, "sample index in --images");

    auto* eval = app.add_subcommand("eval", "explanation and masking metrics");
    common(eval);
    seeded(eval);
    testing(eval);
    policy(eval);
    graphs(eval);
    eval->add_option("--metric", cfg.metric, "irof, le, fidelity or repair")
        ->required()
        ->check(CLI::IsMember({"irof", "le", "fidelity", "repair"}));
    eval->add_option("--fractions", cfg.fractions, "comma-separated masking fractions");
    eval->add_option("--samples", cfg.samples, "number of inputs for irof and le");
    eval->add_option("--grid", cfg.grid, "IROF patch grid size");
    eval->add_option("--noise-sigma", cfg.noise_sigma, "LE noise sigma (0: 0.1 of the input range)");
    eval->add_option("--le-runs", cfg.le_runs, "LE perturbations per input");
    eval->add_option("--random-draws", cfg.random_draws, "random control draws for fidelity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitInput;
    }

    for (auto* sub : app.get_subcommands()) {
        cfg.command = sub->get_name();
        if (sub->get_option_no_throw("--class") && sub->count("--class")) cfg.class_id = class_id;
        if (sub->get_option_no_throw("--layer") && sub->count("--layer")) cfg.layer = layer;
    }
    if (!apply_worker_env(err)) return kExitInput;

    try {
        return dispatch(cfg, out, err);
    } catch (...) {
        return report_error(std::current_exception(), err);
    }
}

int report_error(std::exception_ptr failure, std::ostream& err) {
    try {
        std::rethrow_exception(failure);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::Invariant ? kExitInvariant : kExitInput;
    } catch (const json::exception& e) {
        err << "error: malformed JSON: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInvariant;
    } catch (...) {
        err << "internal error: unknown exception\n";
        return kExitInvariant;
    }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"ceg"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ceg::cli
