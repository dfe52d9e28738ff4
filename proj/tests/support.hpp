#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ceg/model_io.hpp"
#include "ceg/network.hpp"

namespace ceg::testing {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(CEG_FIXTURE_DIR) / name;
}

inline NetworkSpec load_lenet() { return load_model(fixture("lenet.cegm")); }

inline LabeledDataset load_split(const std::string& split) {
    return load_idx(fixture(split + "-images-idx3-ubyte"), fixture(split + "-labels-idx1-ubyte"));
}

// Two dense layers with identity weights and zero bias on a 2-vector input.
inline NetworkSpec identity_222() {
    return NetworkSpec({LayerSpec::dense("fc1", Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0})),
                        LayerSpec::dense("fc2", Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}))},
                       {2}, 2);
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t(std::move(shape));
    for (float& v : t.data) v = dist(gen);
    return t;
}

// Small random conv -> relu -> pool -> flatten -> dense -> relu -> dense
// network on a [c, h, w] input.
inline NetworkSpec random_conv_net(std::mt19937_64& gen, std::size_t c = 1, std::size_t h = 6, std::size_t w = 6,
                                   std::size_t c1 = 3, std::size_t hidden = 5, std::size_t classes = 3) {
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::conv2d("conv1", random_tensor({c1, c, 3, 3}, gen), random_tensor({c1}, gen), {1, 1},
                                       {1, 1}));
    layers.push_back(LayerSpec::relu("relu1"));
    layers.push_back(LayerSpec::maxpool2d("pool1", {2, 2}, {2, 2}));
    layers.push_back(LayerSpec::flatten());
    const std::size_t flat = c1 * (h / 2) * (w / 2);
    layers.push_back(LayerSpec::dense("fc1", random_tensor({hidden, flat}, gen), random_tensor({hidden}, gen)));
    layers.push_back(LayerSpec::relu("relu2"));
    layers.push_back(LayerSpec::dense("fc2", random_tensor({classes, hidden}, gen), random_tensor({classes}, gen)));
    return NetworkSpec(std::move(layers), {c, h, w}, classes);
}

inline LabeledDataset random_dataset(const Shape& input, std::size_t n, std::size_t label, std::mt19937_64& gen) {
    LabeledDataset ds;
    Shape s{n};
    s.insert(s.end(), input.begin(), input.end());
    ds.images = random_tensor(s, gen, 0.0f, 1.0f);
    ds.labels.assign(n, label);
    return ds;
}

// Writes an IDX pair to dir; returns {images, labels} paths.
inline std::pair<std::filesystem::path, std::filesystem::path> write_idx(const std::filesystem::path& dir,
                                                                          const std::vector<std::uint8_t>& pixels,
                                                                          std::uint32_t n, std::uint32_t rows,
                                                                          std::uint32_t cols,
                                                                          const std::vector<std::uint8_t>& labels) {
    auto be = [](std::vector<std::uint8_t>& out, std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
    };
    std::vector<std::uint8_t> img, lab;
    be(img, 0x803);
    be(img, n);
    be(img, rows);
    be(img, cols);
    img.insert(img.end(), pixels.begin(), pixels.end());
    be(lab, 0x801);
    be(lab, static_cast<std::uint32_t>(labels.size()));
    lab.insert(lab.end(), labels.begin(), labels.end());
    std::filesystem::create_directories(dir);
    const auto ip = dir / "images.idx", lp = dir / "labels.idx";
    std::ofstream(ip, std::ios::binary).write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    std::ofstream(lp, std::ios::binary).write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
    return {ip, lp};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ceg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace ceg::testing
