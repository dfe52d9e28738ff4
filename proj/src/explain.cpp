#include "ceg/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ceg/error.hpp"
#include "ceg/kernels.hpp"

namespace ceg {

std::pair<std::size_t, std::size_t> input_plane(const NetworkSpec& net) {
    const auto& s = net.input_shape();
    if (s.size() == 3) return {s[1], s[2]};
    if (s.size() == 2) return {s[0], s[1]};
    return {1, numel(s)};
}

SaliencyMap minmax_normalize(const Tensor& plane, std::string source) {
    if (plane.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "saliency plane must be 2-D");
    SaliencyMap m;
    m.height = plane.dim(0);
    m.width = plane.dim(1);
    m.source = std::move(source);
    m.values.assign(plane.size(), 0.0f);
    if (plane.size() == 0) {
        m.degenerate = true;
        return m;
    }
    const auto [lo_it, hi_it] = std::minmax_element(plane.data.begin(), plane.data.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {
        m.degenerate = true;
        return m;
    }
    for (std::size_t i = 0; i < plane.size(); ++i) {
        const double v = (static_cast<double>(plane.data[i]) - lo) / (hi - lo);
        m.values[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return m;
}

Tensor upsample_bilinear(const Tensor& plane, std::size_t height, std::size_t width) {
    if (plane.rank() != 2 || plane.size() == 0) throw Error(ErrorCode::ShapeMismatch, "upsample expects a non-empty [h, w] plane");
    const std::size_t h = plane.dim(0), w = plane.dim(1);
    Tensor out({height, width});
    auto coord = [](std::size_t dst, std::size_t in, std::size_t outn) {
        const double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
        return std::clamp(src, 0.0, static_cast<double>(in - 1));
    };
    for (std::size_t r = 0; r < height; ++r) {
        const double sy = coord(r, h, height);
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t c = 0; c < width; ++c) {
            const double sx = coord(c, w, width);
            const auto x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            const double top = (1.0 - fx) * plane.data[y0 * w + x0] + fx * plane.data[y0 * w + x1];
            const double bot = (1.0 - fx) * plane.data[y1 * w + x0] + fx * plane.data[y1 * w + x1];
            out.data[r * width + c] = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
    }
    return out;
}

namespace {

// Last [C, H, W] shape inside graph layer l, i.e. a^l before any flatten.
const Shape& spatial_shape(const NetworkSpec& net, std::size_t l) {
    for (std::size_t i = net.graph_layer_end(l) + 1; i-- > net.graph_layer_index(l);) {
        if (net.layer_output_shape(i).size() == 3) return net.layer_output_shape(i);
    }
    return net.activation_shape(l);
}

}  // namespace

Tensor filter_response(const NetworkView& net, const ActivationTrace& trace, std::size_t l, std::size_t j,
                       std::size_t i, std::size_t sample) {
    const NetworkSpec& base = net.base();
    const PathGroup group = make_path_group(base, l, j, {i});  // validates l, j, i
    const Tensor& act = trace.at(l);
    if (sample >= act.dim(0)) throw Error(ErrorCode::ShapeMismatch, "trace has no sample " + std::to_string(sample));
    const Shape& a_shape = spatial_shape(base, l);
    const auto a = act.row(sample);
    const std::size_t child_index = base.graph_layer_index(l + 1);
    const auto& child = base.layer(child_index);
    const Tensor& w = net.weight(child_index);

    if (child.kind == LayerKind::Conv2d) {
        kernels::ConvGeometry g;
        g.in_c = 1;
        g.in_h = a_shape[1];
        g.in_w = a_shape[2];
        g.out_c = 1;
        g.k_h = w.dim(2);
        g.k_w = w.dim(3);
        g.stride_h = child.stride[0];
        g.stride_w = child.stride[1];
        g.pad_h = child.padding[0];
        g.pad_w = child.padding[1];
        Tensor out({g.out_h(), g.out_w()});
        const std::size_t plane = g.in_h * g.in_w;
        const std::size_t kplane = g.k_h * g.k_w;
        const auto kernel = w.values().subspan((i * w.dim(1) + j) * kplane, kplane);
        kernels::reference::conv2d(g, a.subspan(j * plane, plane), kernel, {}, out.values());
        return out;
    }
    // dense child: per-element products over the parent's slice of columns
    const std::size_t span = w.dim(1) / base.node_count(l);
    const float* w_row = w.data.data() + i * w.dim(1) + j * span;
    Tensor out = group.crossing_flatten ? Tensor({a_shape[1], a_shape[2]}) : Tensor({1, span});
    for (std::size_t q = 0; q < span; ++q) {
        out.data[q] = static_cast<float>(static_cast<double>(w_row[q]) * static_cast<double>(a[j * span + q]));
    }
    return out;
}

namespace {

const GraphLayer& require_child(const CausalGraph& g, std::size_t l, std::size_t i) {
    if (l == 0 || l >= g.layer_count()) {
        throw Error(ErrorCode::InvalidLayer, "explanations need 1 <= l < " + std::to_string(g.layer_count()));
    }
    const auto& child = g.layer(l + 1);
    const auto nodes = child.critical_nodes();
    if (std::find(nodes.begin(), nodes.end(), i) == nodes.end()) {
        throw Error(ErrorCode::NotInGraph, "node " + std::to_string(i) + " is not critical in layer " + std::to_string(l + 1));
    }
    return child;
}

}  // namespace

Tensor node_response(const NetworkView& net, const ActivationTrace& trace, const CausalGraph& g, std::size_t l,
                     std::size_t i, std::size_t sample) {
    require_child(g, l, i);
    const auto parents = g.layer(l).critical_nodes();
    if (parents.empty()) {
        throw Error(ErrorCode::NoParents, "layer " + std::to_string(l) + " has no critical parents for node " + std::to_string(i));
    }
    Tensor sum;
    std::vector<double> acc;
    for (std::size_t j : parents) {
        Tensor r = filter_response(net, trace, l, j, i, sample);
        if (acc.empty()) {
            sum = Tensor(r.shape);
            acc.assign(r.size(), 0.0);
        }
        for (std::size_t q = 0; q < r.size(); ++q) acc[q] += r.data[q];
    }
    for (std::size_t q = 0; q < acc.size(); ++q) sum.data[q] = static_cast<float>(acc[q] / static_cast<double>(parents.size()));
    return sum;
}

SaliencyMap node_saliency(const NetworkView& net, const ActivationTrace& trace, const CausalGraph& g, std::size_t l,
                          std::size_t i, std::size_t sample) {
    const auto [H, W] = input_plane(net.base());
    const Tensor plane = node_response(net, trace, g, l, i, sample);
    return minmax_normalize(upsample_bilinear(plane, H, W),
                            "node layer=" + std::to_string(l + 1) + " i=" + std::to_string(i));
}

SaliencyMap aggregate_saliency(const NetworkView& net, const Tensor& x, const CausalGraph& g, std::size_t l) {
    if (l == 0 || l >= g.layer_count()) throw Error(ErrorCode::InvalidLayer, "invalid explanation layer " + std::to_string(l));
    const auto children = g.layer(l + 1).critical_nodes();
    if (children.empty()) {
        throw Error(ErrorCode::NoCriticalNodes, "layer " + std::to_string(l + 1) + " has no critical nodes");
    }
    const Tensor batch = stack(std::span<const Tensor>(&x, 1));
    const auto traced = forward_traced(net, batch);
    const auto [H, W] = input_plane(net.base());
    std::vector<double> acc(H * W, 0.0);
    for (std::size_t i : children) {
        const auto m = node_saliency(net, traced.trace, g, l, i);
        for (std::size_t q = 0; q < acc.size(); ++q) acc[q] += m.values[q];
    }
    Tensor mean({H, W});
    for (std::size_t q = 0; q < acc.size(); ++q) mean.data[q] = static_cast<float>(acc[q] / static_cast<double>(children.size()));
    return minmax_normalize(mean, "causal aggregate l=" + std::to_string(l));
}

PeakSet find_peaks(const SaliencyMap& map) {
    PeakSet out;
    if (map.values.empty()) return out;
    const auto H = static_cast<std::ptrdiff_t>(map.height), W = static_cast<std::ptrdiff_t>(map.width);
    std::size_t best = 0;
    for (std::size_t q = 1; q < map.values.size(); ++q) {
        if (map.values[q] > map.values[best]) best = q;
    }
    out.absolute_max = {best / map.width, best % map.width, map.values[best]};

    for (std::ptrdiff_t r = 0; r < H; ++r) {
        for (std::ptrdiff_t c = 0; c < W; ++c) {
            const float v = map.values[static_cast<std::size_t>(r * W + c)];
            bool is_max = true, is_min = true, has_neighbor = false;
            for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
                for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const auto rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                    has_neighbor = true;
                    const float n = map.values[static_cast<std::size_t>(rr * W + cc)];
                    if (n >= v) is_max = false;
                    if (n <= v) is_min = false;
                }
            }
            if (!has_neighbor) continue;
            const auto ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
            if (is_max) out.maxima.push_back({ur, uc, v});
            if (is_min) out.minima.push_back({ur, uc, -static_cast<double>(v)});
        }
    }
    auto by_score = [](const Peak& a, const Peak& b) { return a.score > b.score; };
    std::stable_sort(out.maxima.begin(), out.maxima.end(), by_score);
    std::stable_sort(out.minima.begin(), out.minima.end(), by_score);
    return out;
}

std::vector<FilterExplanation> top1_filter_response(const NetworkView& net, const Tensor& x, const CausalGraph& g,
                                                    std::size_t l) {
    if (l == 0 || l >= g.layer_count()) throw Error(ErrorCode::InvalidLayer, "invalid explanation layer " + std::to_string(l));
    const auto& children = g.layer(l + 1).critical;
    if (children.empty()) throw Error(ErrorCode::NoCriticalNodes, "layer " + std::to_string(l + 1) + " has no critical nodes");
    const auto& parents = g.layer(l).critical;
    if (parents.empty()) throw Error(ErrorCode::NoParents, "layer " + std::to_string(l) + " has no critical nodes");
    const NodeDecision* top = &parents.front();
    for (const auto& p : parents) {
        if (std::fabs(p.mean_te) > std::fabs(top->mean_te)) top = &p;
    }

    const Tensor batch = stack(std::span<const Tensor>(&x, 1));
    const auto traced = forward_traced(net, batch);
    const auto [H, W] = input_plane(net.base());
    std::vector<FilterExplanation> out;
    for (const auto& child : children) {
        FilterExplanation e;
        e.parent = top->node;
        e.child = child.node;
        e.map = minmax_normalize(upsample_bilinear(filter_response(net, traced.trace, l, top->node, child.node), H, W),
                                 "top1 l=" + std::to_string(l) + " j=" + std::to_string(top->node) +
                                     " i=" + std::to_string(child.node));
        e.peaks = find_peaks(e.map);
        out.push_back(std::move(e));
    }
    return out;
}

SaliencyMap occlusion_baseline(const NetworkView& net, const Tensor& x, std::size_t k, std::size_t patch,
                               std::size_t stride, float fill) {
    const NetworkSpec& base = net.base();
    if (x.shape != base.input_shape()) {
        throw Error(ErrorCode::ShapeMismatch, "input shape " + shape_to_string(x.shape) + " != " +
                                                  shape_to_string(base.input_shape()));
    }
    if (k >= base.num_classes()) throw Error(ErrorCode::InvalidArgument, "class out of range");
    const auto [H, W] = input_plane(base);
    if (patch == 0 || stride == 0 || patch > H || patch > W) {
        throw Error(ErrorCode::ShapeMismatch, "patch " + std::to_string(patch) + " does not fit a " +
                                                  std::to_string(H) + "x" + std::to_string(W) + " input");
    }
    const std::size_t channels = numel(base.input_shape()) / (H * W);

    std::vector<std::pair<std::size_t, std::size_t>> origins;
    for (std::size_t r = 0; r + patch <= H; r += stride) {
        for (std::size_t c = 0; c + patch <= W; c += stride) origins.emplace_back(r, c);
    }
    std::vector<Tensor> variants(origins.size() + 1, x);
    for (std::size_t v = 0; v < origins.size(); ++v) {
        const auto [r0, c0] = origins[v];
        for (std::size_t ch = 0; ch < channels; ++ch) {
            for (std::size_t r = r0; r < r0 + patch; ++r) {
                for (std::size_t c = c0; c < c0 + patch; ++c) variants[v + 1].data[(ch * H + r) * W + c] = fill;
            }
        }
    }
    const Tensor logits = forward(net, stack(variants));
    const std::size_t C = base.num_classes();
    const double original = logits.data[k];

    std::vector<double> sum(H * W, 0.0);
    std::vector<std::size_t> count(H * W, 0);
    for (std::size_t v = 0; v < origins.size(); ++v) {
        const double diff = original - static_cast<double>(logits.data[(v + 1) * C + k]);
        const auto [r0, c0] = origins[v];
        for (std::size_t r = r0; r < r0 + patch; ++r) {
            for (std::size_t c = c0; c < c0 + patch; ++c) {
                sum[r * W + c] += diff;
                ++count[r * W + c];
            }
        }
    }
    Tensor plane({H, W});
    for (std::size_t q = 0; q < plane.size(); ++q) {
        plane.data[q] = count[q] ? static_cast<float>(sum[q] / static_cast<double>(count[q])) : 0.0f;
    }
    return minmax_normalize(plane, "occlusion");
}

std::size_t default_explain_layer(const NetworkSpec& net) {
    const std::size_t L = net.graph_layer_count();
    if (L < 2) throw Error(ErrorCode::InvalidLayer, "network has no hidden graph layer to explain");
    std::size_t last_conv = 0;
    for (std::size_t l = 1; l <= L; ++l) {
        if (net.graph_layer(l).kind == LayerKind::Conv2d) last_conv = l;
    }
    if (last_conv >= 2) return last_conv - 1;
    if (last_conv == 1) return 1;
    return L - 1;
}

std::string saliency_csv(const SaliencyMap& map) {
    std::ostringstream out;
    char buf[32];
    for (std::size_t r = 0; r < map.height; ++r) {
        for (std::size_t c = 0; c < map.width; ++c) {
            std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(map.at(r, c)));
            out << (c ? "," : "") << buf;
        }
        out << "\n";
    }
    return out.str();
}

void write_pgm16(const SaliencyMap& map, const std::filesystem::path& path, const std::vector<std::string>& comments) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    out << "P5\n";
    for (const auto& c : comments) out << "# " << c << "\n";
    out << map.width << " " << map.height << "\n65535\n";
    for (float v : map.values) {
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 65535.0));
        const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
        out.write(bytes, 2);
    }
    if (!out) throw Error(ErrorCode::Io, "short write to '" + path.string() + "'");
}

nlohmann::json peaks_to_json(const PeakSet& peaks) {
    auto list = [](const std::vector<Peak>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& p : v) a.push_back({{"row", p.row}, {"col", p.col}, {"score", p.score}});
        return a;
    };
    return {{"absolute_max", {{"row", peaks.absolute_max.row}, {"col", peaks.absolute_max.col}, {"score", peaks.absolute_max.score}}},
            {"maxima", list(peaks.maxima)},
            {"minima", list(peaks.minima)}};
}

}  // namespace ceg
