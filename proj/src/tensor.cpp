#include "ceg/tensor.hpp"

#include <cmath>
#include <numeric>

#include "ceg/error.hpp"

namespace ceg {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::TruncatedBlob: return "TruncatedBlob";
        case ErrorCode::RejectedInvalid: return "RejectedInvalid";
        case ErrorCode::CountMismatch: return "CountMismatch";
        case ErrorCode::EmptyClass: return "EmptyClass";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidLayer: return "InvalidLayer";
        case ErrorCode::InvalidGroup: return "InvalidGroup";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::NotInGraph: return "NotInGraph";
        case ErrorCode::NoParents: return "NoParents";
        case ErrorCode::NoCriticalNodes: return "NoCriticalNodes";
        case ErrorCode::AllDrawsDegenerate: return "AllDrawsDegenerate";
        case ErrorCode::ZeroBaseline: return "ZeroBaseline";
        case ErrorCode::Io: return "Io";
        case ErrorCode::Invariant: return "Invariant";
    }
    return "Unknown";
}

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(numel(shape), 0.0f) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    if (numel(shape) != data.size()) {
        throw Error(ErrorCode::ShapeMismatch, "tensor of shape " + shape_to_string(shape) +
                                                  " cannot hold " + std::to_string(data.size()) +
                                                  " values");
    }
}

Tensor Tensor::filled(Shape s, float value) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

std::span<const float> Tensor::row(std::size_t i) const {
    const std::size_t stride = shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0];
    return std::span<const float>(data).subspan(i * stride, stride);
}

std::span<float> Tensor::row(std::size_t i) {
    const std::size_t stride = shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0];
    return std::span<float>(data).subspan(i * stride, stride);
}

bool Tensor::all_finite() const noexcept {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor stack(std::span<const Tensor> samples) {
    if (samples.empty()) throw Error(ErrorCode::ShapeMismatch, "cannot stack zero samples");
    Shape shape = samples.front().shape;
    shape.insert(shape.begin(), samples.size());
    Tensor out(shape);
    const std::size_t stride = samples.front().size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].shape != samples.front().shape) {
            throw Error(ErrorCode::ShapeMismatch, "stack: sample " + std::to_string(i) +
                                                      " has shape " +
                                                      shape_to_string(samples[i].shape));
        }
        std::copy(samples[i].data.begin(), samples[i].data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return out;
}

Tensor slice_sample(const Tensor& batch, std::size_t i) {
    if (batch.rank() == 0 || i >= batch.dim(0)) {
        throw Error(ErrorCode::ShapeMismatch, "sample index " + std::to_string(i) +
                                                  " out of range for batch " +
                                                  shape_to_string(batch.shape));
    }
    Shape shape(batch.shape.begin() + 1, batch.shape.end());
    auto r = batch.row(i);
    return Tensor(shape, std::vector<float>(r.begin(), r.end()));
}

}  // namespace ceg
