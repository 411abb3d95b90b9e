#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ccdnet/core/errors.hpp"
#include "ccdnet/core/rng.hpp"
#include "ccdnet/core/tensor.hpp"
#include "ccdnet/data/annotation.hpp"
#include "ccdnet/data/png_io.hpp"
#include "ccdnet/data/voc_xml.hpp"

namespace ccdnet {

enum class FlipAxis { horizontal, vertical };

/// Mirror an image and its boxes; applying the same flip twice is the
/// identity.
template <typename T>
inline std::pair<Tensor<T>, std::vector<Annotation>> flip_augment(
    const Tensor<T>& image, const std::vector<Annotation>& annos, FlipAxis axis) {
    const int H = image.dim(0), W = image.dim(1);
    Tensor<T> out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (axis == FlipAxis::horizontal)
                out.at(y, x) = image.at(y, W - 1 - x);
            else
                out.at(y, x) = image.at(H - 1 - y, x);
        }
    std::vector<Annotation> flipped = annos;
    for (auto& a : flipped) {
        if (axis == FlipAxis::horizontal) {
            const double x0 = a.box.x_min, x1 = a.box.x_max;
            a.box.x_min = W - x1;
            a.box.x_max = W - x0;
        } else {
            const double y0 = a.box.y_min, y1 = a.box.y_max;
            a.box.y_min = H - y1;
            a.box.y_max = H - y0;
        }
    }
    return {std::move(out), std::move(flipped)};
}

/// Deterministic seeded 8:2 split: |train| = round(0.8 n), disjoint and
/// exhaustive. Requires at least 5 ids.
inline std::pair<std::vector<std::string>, std::vector<std::string>> dataset_split(
    std::vector<std::string> ids, std::uint64_t seed) {
    if (ids.size() < 5) throw ConfigError("dataset_split: need at least 5 ids");
    Rng rng(seed);
    rng.shuffle(ids.begin(), ids.end());
    const std::size_t n_train =
        static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(ids.size())));
    std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::string> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    return {std::move(train), std::move(test)};
}

struct DatasetItem {
    std::string id;
    Tensor<float> image;  // (H,W) in [0,1]
    std::vector<Annotation> annos;
};

inline void write_id_manifest(const std::string& path, const std::vector<std::string>& ids) {
    std::ofstream f(path);
    if (!f) throw ConfigError("manifest: cannot write " + path);
    for (const auto& id : ids) f << id << '\n';
}

inline std::vector<std::string> read_id_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("manifest: cannot read " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

/// Load PNG+XML pairs listed in `<split>.txt` under a dataset root with
/// train/ and test/ subdirectories.
inline std::vector<DatasetItem> load_split(const std::string& root, const std::string& split) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(root) / split;
    const auto ids = read_id_manifest((fs::path(root) / (split + ".txt")).string());
    std::vector<DatasetItem> items;
    items.reserve(ids.size());
    for (const auto& id : ids) {
        DatasetItem item;
        item.id = id;
        item.image = read_png_gray((dir / (id + ".png")).string());
        item.annos = read_voc_xml((dir / (id + ".xml")).string()).annos;
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace ccdnet
