#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ceg/network.hpp"
#include "ceg/tensor.hpp"

namespace ceg {

// CEGM v1: "CEGM" | u32 LE version (=1) | u64 LE header length | canonical
// JSON header | blob of little-endian float32. Parameter offsets in the
// header are byte offsets from the start of the blob.
inline constexpr std::uint32_t kCegmVersion = 1;

NetworkSpec load_model(const std::filesystem::path& path);
NetworkSpec parse_model(const std::vector<std::uint8_t>& bytes);
void save_model(const NetworkSpec& net, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const NetworkSpec& net);

struct LabeledDataset {
    Tensor images;  // [N, C, H, W]
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    Tensor sample(std::size_t i) const { return slice_sample(images, i); }
};

// IDX images (magic 2051) and labels (magic 2049); pixels divided by `divide`.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, double divide = 255.0);

// Samples with label k in original order. Throws EmptyClass when none match.
LabeledDataset filter_by_class(const LabeledDataset& ds, std::size_t k, std::size_t num_classes);

// First n samples (or all when n >= size).
LabeledDataset take(const LabeledDataset& ds, std::size_t n);

}  // namespace ceg
