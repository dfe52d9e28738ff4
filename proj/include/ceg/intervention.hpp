#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ceg/forward.hpp"
#include "ceg/network.hpp"

namespace ceg {

// All weights from one parent node j of graph layer l to a set of target
// nodes in graph layer l+1. The unit of intervention.
struct PathGroup {
    std::size_t parent_layer = 1;       // l, 1-based, in [1, L-1]
    std::size_t parent_node = 0;        // j
    std::vector<std::size_t> targets;   // sorted, unique nodes of layer l+1
    bool crossing_flatten = false;      // conv parent feeding a dense child

    friend bool operator==(const PathGroup&, const PathGroup&) = default;
};

// Validates and normalizes (sorts, dedups) a group against a network.
PathGroup make_path_group(const NetworkSpec& net, std::size_t l, std::size_t j,
                          std::vector<std::size_t> targets);

// One group per parent node of layer l, all sharing the target set.
std::vector<PathGroup> enumerate_path_groups(const NetworkSpec& net, std::size_t l,
                                             std::vector<std::size_t> targets);

enum class InterventionMode { Binary, Continuous };

std::string_view to_string(InterventionMode mode);

struct InterventionPolicy {
    InterventionMode mode = InterventionMode::Binary;
    double b = 0.5;          // continuous only
    double epsilon = 0.01;   // continuous only

    static InterventionPolicy binary() { return {}; }
    static InterventionPolicy continuous(double b, double epsilon = 0.01);

    // Throws InvalidArgument unless epsilon < b < 1 (continuous).
    void validate() const;
};

struct InterventionValue {
    double beta = 0.0;
};

// Deterministic random stream. Child streams are derived from a root seed
// and a stream index, so results never depend on which worker draws them.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng stream(std::uint64_t root_seed, std::uint64_t stream_index);

    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal(double mean, double sigma);
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t root_seed, std::uint64_t stream_index);

// Stream index used for the path group of node j in graph layer l.
std::uint64_t path_group_stream(std::size_t l, std::size_t j);

InterventionValue sample_beta(const InterventionPolicy& policy, Rng& rng);

// Returns a view equal to `net` except that the group's weights are scaled
// by beta. Only the child layer's weight tensor is copied; biases are never
// touched. Views compose: applying to a view keeps its earlier overrides.
NetworkView apply(const NetworkView& net, const PathGroup& group, double beta);

// Applies beta to several groups at once, copying each touched layer once.
NetworkView apply_all(const NetworkView& net, std::span<const PathGroup> groups, double beta);

// Number of weight elements a group covers.
std::size_t path_group_weight_count(const NetworkSpec& net, const PathGroup& group);

}  // namespace ceg
