#include "ceg/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "ceg/error.hpp"

namespace ceg {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'E', 'G', 'M'};
constexpr std::size_t kPreamble = 4 + 4 + 8;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to '" + path.string() + "'");
}

template <typename T>
T read_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

template <typename T>
void write_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

float float_from_le(const std::uint8_t* p) {
    return std::bit_cast<float>(read_le<std::uint32_t>(p));
}

Pair read_pair(const json& j, const char* key, Pair fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw Error(ErrorCode::MalformedHeader, std::string(key) + " must be a pair");
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

struct BlobCursor {
    const std::uint8_t* blob;
    std::size_t blob_size;
    std::size_t next_free = 0;

    Tensor read(const json& entry, const std::string& what) {
        Shape shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto count = entry.at("count").get<std::uint64_t>();
        if (count != numel(shape)) {
            throw Error(ErrorCode::MalformedHeader, what + ": count " + std::to_string(count) +
                                                        " != product of shape " + shape_to_string(shape));
        }
        if (offset < next_free) {
            throw Error(ErrorCode::MalformedHeader, what + ": offset " + std::to_string(offset) +
                                                        " overlaps or precedes an earlier parameter");
        }
        if (offset > blob_size || count > (blob_size - offset) / 4) {
            throw Error(ErrorCode::TruncatedBlob, what + ": " + std::to_string(count) + " floats at offset " +
                                                      std::to_string(offset) + " exceed blob of " +
                                                      std::to_string(blob_size) + " bytes");
        }
        std::vector<float> values(count);
        for (std::size_t i = 0; i < count; ++i) values[i] = float_from_le(blob + offset + 4 * i);
        next_free = offset + 4 * count;
        return Tensor(std::move(shape), std::move(values));
    }
};

json param_entry(const Tensor& t, std::vector<std::uint8_t>& blob) {
    json entry = {{"count", t.size()}, {"offset", blob.size()}, {"shape", t.shape}};
    for (float v : t.data) write_le(blob, std::bit_cast<std::uint32_t>(v));
    return entry;
}

}  // namespace

NetworkSpec parse_model(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::BadMagic, "not a CEGM file");
    }
    if (bytes.size() < kPreamble) throw Error(ErrorCode::MalformedHeader, "file too short for CEGM preamble");
    const auto version = read_le<std::uint32_t>(bytes.data() + 4);
    if (version != kCegmVersion) {
        throw Error(ErrorCode::UnsupportedVersion, "CEGM version " + std::to_string(version));
    }
    const auto header_len = read_le<std::uint64_t>(bytes.data() + 8);
    if (header_len > bytes.size() - kPreamble) {
        throw Error(ErrorCode::MalformedHeader, "header length " + std::to_string(header_len) + " exceeds file");
    }
    const auto* header_begin = bytes.data() + kPreamble;
    BlobCursor cursor{header_begin + header_len, bytes.size() - kPreamble - header_len};

    try {
        const json header = json::parse(header_begin, header_begin + header_len);
        std::vector<LayerSpec> layers;
        for (const auto& jl : header.at("layers")) {
            LayerSpec spec;
            spec.name = jl.at("name").get<std::string>();
            spec.kind = parse_layer_kind(jl.at("kind").get<std::string>());
            spec.stride = read_pair(jl, "stride", {1, 1});
            spec.padding = read_pair(jl, "padding", {0, 0});
            spec.kernel = read_pair(jl, "kernel", {1, 1});
            if (jl.contains("weight")) spec.weight = cursor.read(jl.at("weight"), spec.name + ".weight");
            if (jl.contains("bias")) spec.bias = cursor.read(jl.at("bias"), spec.name + ".bias");
            if (spec.parameterized() && !spec.weight) {
                throw Error(ErrorCode::MalformedHeader, "layer '" + spec.name + "' is missing its weight");
            }
            layers.push_back(std::move(spec));
        }
        std::optional<Preprocess> pre;
        if (header.contains("preprocess")) {
            const auto& jp = header.at("preprocess");
            Preprocess p;
            p.divide = jp.value("divide", 255.0);
            p.mean = jp.value("mean", std::vector<double>{});
            p.std = jp.value("std", std::vector<double>{});
            pre = p;
        }
        return NetworkSpec(std::move(layers), header.at("input_shape").get<Shape>(),
                           header.at("num_classes").get<std::size_t>(), std::move(pre));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, e.what());
    }
}

NetworkSpec load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

std::vector<std::uint8_t> serialize_model(const NetworkSpec& net) {
    std::vector<std::uint8_t> blob;
    json layers = json::array();
    for (const auto& spec : net.layers()) {
        json jl = {{"kind", to_string(spec.kind)}, {"name", spec.name}};
        switch (spec.kind) {
            case LayerKind::Conv2d:
                jl["padding"] = spec.padding;
                jl["stride"] = spec.stride;
                break;
            case LayerKind::MaxPool2d:
            case LayerKind::AvgPool2d:
                jl["kernel"] = spec.kernel;
                jl["stride"] = spec.stride;
                break;
            default:
                break;
        }
        if (spec.weight) {
            if (!spec.weight->all_finite()) throw Error(ErrorCode::RejectedInvalid, spec.name + ".weight");
            jl["weight"] = param_entry(*spec.weight, blob);
        }
        if (spec.bias) {
            if (!spec.bias->all_finite()) throw Error(ErrorCode::RejectedInvalid, spec.name + ".bias");
            jl["bias"] = param_entry(*spec.bias, blob);
        }
        layers.push_back(std::move(jl));
    }
    json header = {{"input_shape", net.input_shape()}, {"layers", layers}, {"num_classes", net.num_classes()}};
    if (const auto& pre = net.preprocess()) {
        json jp = {{"divide", pre->divide}};
        if (!pre->mean.empty()) {
            jp["mean"] = pre->mean;
            jp["std"] = pre->std;
        }
        header["preprocess"] = jp;
    }
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    write_le(out, kCegmVersion);
    write_le(out, static_cast<std::uint64_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

void save_model(const NetworkSpec& net, const std::filesystem::path& path) {
    write_file(path, serialize_model(net));
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        double divide) {
    if (!(divide > 0.0)) throw Error(ErrorCode::InvalidArgument, "divide must be positive");
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);
    if (img.size() < 16 || read_be32(img.data()) != 0x00000803) {
        throw Error(ErrorCode::BadMagic, "'" + images_path.string() + "' is not an IDX image file");
    }
    if (lab.size() < 8 || read_be32(lab.data()) != 0x00000801) {
        throw Error(ErrorCode::BadMagic, "'" + labels_path.string() + "' is not an IDX label file");
    }
    const std::size_t n = read_be32(img.data() + 4);
    const std::size_t rows = read_be32(img.data() + 8);
    const std::size_t cols = read_be32(img.data() + 12);
    const std::size_t n_labels = read_be32(lab.data() + 4);
    if (n != n_labels) {
        throw Error(ErrorCode::CountMismatch, std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
    }
    if (img.size() - 16 < n * rows * cols) throw Error(ErrorCode::TruncatedBlob, images_path.string());
    if (lab.size() - 8 < n) throw Error(ErrorCode::TruncatedBlob, labels_path.string());

    LabeledDataset ds;
    ds.images = Tensor({n, 1, rows, cols});
    for (std::size_t i = 0; i < n * rows * cols; ++i) {
        ds.images.data[i] = static_cast<float>(static_cast<double>(img[16 + i]) / divide);
    }
    ds.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n));
    return ds;
}

LabeledDataset filter_by_class(const LabeledDataset& ds, std::size_t k, std::size_t num_classes) {
    if (k >= num_classes) {
        throw Error(ErrorCode::InvalidArgument, "class " + std::to_string(k) + " outside [0, " +
                                                    std::to_string(num_classes) + ")");
    }
    std::vector<Tensor> picked;
    LabeledDataset out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] == k) {
            picked.push_back(ds.sample(i));
            out.labels.push_back(k);
        }
    }
    if (picked.empty()) throw Error(ErrorCode::EmptyClass, "no samples of class " + std::to_string(k));
    out.images = stack(picked);
    return out;
}

LabeledDataset take(const LabeledDataset& ds, std::size_t n) {
    if (n >= ds.size()) return ds;
    LabeledDataset out;
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(n));
    Shape shape = ds.images.shape;
    shape[0] = n;
    const std::size_t stride = ds.images.size() / ds.images.dim(0);
    out.images = Tensor(shape, std::vector<float>(ds.images.data.begin(),
                                                  ds.images.data.begin() + static_cast<std::ptrdiff_t>(n * stride)));
    return out;
}

}  // namespace ceg
