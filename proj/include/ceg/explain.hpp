#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceg/forward.hpp"
#include "ceg/graph.hpp"

namespace ceg {

// Spatial explanation at input resolution, min-max normalized to [0, 1].
// A constant map normalizes to all zeros and sets `degenerate`.
struct SaliencyMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;
    std::string source;
    bool degenerate = false;

    float at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

struct Peak {
    std::size_t row = 0;
    std::size_t col = 0;
    double score = 0.0;

    friend bool operator==(const Peak&, const Peak&) = default;
};

struct PeakSet {
    std::vector<Peak> maxima;  // strict 3x3 local maxima, score descending
    std::vector<Peak> minima;  // strict 3x3 local minima, score = -value, descending
    Peak absolute_max;         // first row-major position of the global maximum
};

// Spatial size (H, W) explanations are rendered at for this network.
std::pair<std::size_t, std::size_t> input_plane(const NetworkSpec& net);

SaliencyMap minmax_normalize(const Tensor& plane, std::string source = {});
// Bilinear resize with half-pixel centres (edges clamped). plane is [h, w].
Tensor upsample_bilinear(const Tensor& plane, std::size_t height, std::size_t width);

// f(w_ji, a^l_j) for parent j of layer l and child i of layer l+1, on
// sample `sample` of the trace: cross-correlation with the child's stride
// and padding for conv children, elementwise product with the child's
// weight columns for a conv parent feeding a dense child, scalar product
// for dense-to-dense. Returns an un-normalized [h, w] plane.
Tensor filter_response(const NetworkView& net, const ActivationTrace& trace, std::size_t l, std::size_t j,
                       std::size_t i, std::size_t sample = 0);

// Mean of filter_response over the critical parents J^l of child i, before
// up-sampling and normalization.
Tensor node_response(const NetworkView& net, const ActivationTrace& trace, const CausalGraph& g, std::size_t l,
                     std::size_t i, std::size_t sample = 0);

SaliencyMap node_saliency(const NetworkView& net, const ActivationTrace& trace, const CausalGraph& g,
                          std::size_t l, std::size_t i, std::size_t sample = 0);

// Pixel-wise mean of node_saliency over every critical node of l+1,
// re-normalized. x is a single input [C, H, W].
SaliencyMap aggregate_saliency(const NetworkView& net, const Tensor& x, const CausalGraph& g, std::size_t l);

PeakSet find_peaks(const SaliencyMap& map);

struct FilterExplanation {
    std::size_t parent = 0;
    std::size_t child = 0;
    SaliencyMap map;
    PeakSet peaks;
};

// For every critical child of l+1, the response of the critical parent with
// the largest |mean TE| (lowest index on ties).
std::vector<FilterExplanation> top1_filter_response(const NetworkView& net, const Tensor& x, const CausalGraph& g,
                                                    std::size_t l);

// Attribution per pixel: mean over the patches covering it of
// logit_k(x) - logit_k(x with the patch set to fill). Only whole patches on
// the stride grid are used; uncovered pixels score 0.
SaliencyMap occlusion_baseline(const NetworkView& net, const Tensor& x, std::size_t k, std::size_t patch,
                               std::size_t stride, float fill = 0.0f);

// Last conv graph layer's parent index: explanations at l -> l+1 where l+1
// is the last conv layer. Falls back to L-1 when the network has no conv.
std::size_t default_explain_layer(const NetworkSpec& net);

std::string saliency_csv(const SaliencyMap& map);
// Binary 16-bit PGM (P5, maxval 65535, big-endian samples). Each comment
// line is written as "# <line>" in the header.
void write_pgm16(const SaliencyMap& map, const std::filesystem::path& path,
                 const std::vector<std::string>& comments = {});
nlohmann::json peaks_to_json(const PeakSet& peaks);

}  // namespace ceg
