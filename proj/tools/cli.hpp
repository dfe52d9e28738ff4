#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ceg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitInvariant = 3;

struct RunConfig {
    std::string command;
    std::string model;
    std::string images, labels;
    std::string val_images, val_labels;
    std::string graph;
    std::string out = ".";
    std::optional<std::size_t> class_id;
    double alpha = 0.05;
    std::size_t min_samples = 30;
    std::string beta_mode = "binary";
    double beta_b = 0.5;
    double beta_eps = 0.01;
    std::uint64_t seed = 0;
    std::optional<std::size_t> layer;
    std::size_t runs = 100;
    double b_lo = 0.01, b_hi = 0.5;
    std::size_t index = 0;
    std::string explainer = "causal";
    std::string metric;
    std::string fractions = "0.05,0.1,0.2,0.5,1.0";
    std::size_t samples = 50;
    std::size_t grid = 7;
    double noise_sigma = 0.0;  // 0 selects 0.1 of each input's range
    std::size_t le_runs = 10;
    std::size_t random_draws = 5;
    std::size_t patch = 4, stride = 2;

    // Every field relevant to `command`, in a fixed key order.
    nlohmann::json to_json() const;
};

// {tool_version, config, seed}; embedded in every output file.
nlohmann::json make_meta(const RunConfig& cfg);

// Applies CEG_NUM_WORKERS when set. Returns false on a malformed value.
bool apply_worker_env(std::ostream& err);

// Prints the failure to err and returns its exit code: 3 for invariant
// violations and unexpected exceptions, 2 for everything else.
int report_error(std::exception_ptr failure, std::ostream& err);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ceg::cli
