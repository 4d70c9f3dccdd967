// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/backend.hpp"
#include "osketch/dataset.hpp"
#include "osketch/image_io.hpp"
#include "osketch/rng.hpp"
#include "osketch/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace osketch::testing {

inline Image random_image(int h, int w, std::uint64_t seed, int channels = 3) {
    Rng rng(seed);
    Image img(h, w, channels);
    for (auto& p : img.pixels) p = rng.uniform();
    return img;
}

// Dark strokes on a light background, loosely derived from the photo.
inline Image pseudo_sketch(const Image& photo) {
    Image out(photo.height, photo.width, 3);
    for (int y = 0; y < photo.height; ++y) {
        for (int x = 0; x < photo.width; ++x) {
            const double l = 0.299 * photo.at(y, x, 0) + 0.587 * photo.at(y, x, 1) + 0.114 * photo.at(y, x, 2);
            const double v = l < 0.35 ? 0.1 : 0.9 + 0.1 * l;
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = std::min(1.0, v);
        }
    }
    return out;
}

inline LatentImage random_latent(LatentShape shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Eigen::VectorXd v(static_cast<Eigen::Index>(shape.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
    return {shape, v};
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double denom = std::max(b.norm(), 1e-12);
    return (a - b).norm() / denom;
}

class TempDir {
public:
    explicit TempDir(const std::string& label) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("osketch-" + label + "-" + std::to_string((static_cast<std::uint64_t>(rd()) << 32) ^ rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

struct FixtureEntry {
    std::string id;
    std::string subset;
};

// Writes <root>/manifest.json and one photo/sketch PNG pair per entry.
inline void write_fixture(const std::filesystem::path& root, const std::vector<FixtureEntry>& entries, int size = 8,
                          std::uint64_t seed = 7) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "photos");
    fs::create_directories(root / "sketches");
    nlohmann::json doc;
    doc["entries"] = nlohmann::json::array();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const Image photo = random_image(size, size, derive_seed(seed, "photo:" + e.id));
        save_png(root / "photos" / (e.id + ".png"), photo);
        save_png(root / "sketches" / (e.id + ".png"), pseudo_sketch(photo));
        doc["entries"].push_back({{"id", e.id},
                                  {"photo", "photos/" + e.id + ".png"},
                                  {"sketch", "sketches/" + e.id + ".png"},
                                  {"subset", e.subset}});
    }
    std::ofstream(root / kManifestFile) << doc.dump(2);
}

// Subset counts shaped like the 400-pair benchmark.
inline std::vector<FixtureEntry> os_sketch_entries() {
    std::vector<FixtureEntry> out;
    const std::vector<std::pair<std::string, int>> counts = {
        {"cufs", 100}, {"cufsf", 110}, {"wild", 150}, {"internet", 40}};
    for (const auto& [subset, n] : counts) {
        for (int i = 0; i < n; ++i) out.push_back({subset + "_" + std::to_string(i), subset});
    }
    return out;
}

}  // namespace osketch::testing
