// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/tensor.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace osketch {

enum class Subset { cufs, cufsf, wild, internet };

std::string_view to_string(Subset subset);
Subset parse_subset(std::string_view text);

struct ManifestEntry {
    std::string id;
    std::filesystem::path photo_path;   // absolute (root joined with the manifest's relative path)
    std::filesystem::path sketch_path;
    Subset subset = Subset::cufs;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    const ManifestEntry& find(std::string_view id) const;
    bool contains(std::string_view id) const;
    std::map<Subset, int> subset_counts() const;
};

inline constexpr const char* kManifestFile = "manifest.json";

/// Reads `<root>/manifest.json` and checks ids are unique and every image
/// exists. Missing files are reported together, by id.
DatasetManifest load_manifest(const std::filesystem::path& root);

struct OneShotSplit {
    ManifestEntry train;
    std::vector<ManifestEntry> eval;  // manifest order, train entry removed
};

OneShotSplit one_shot_split(const DatasetManifest& manifest, std::string_view train_id);

/// Percentiles used by the evaluation contrast stretch.
inline constexpr double kStretchLowPercentile = 0.01;
inline constexpr double kStretchHighPercentile = 0.99;

/// BT.601 luminance followed by a 1st/99th percentile contrast stretch,
/// clamped to [0, 1]. Accepts 1- or 3-channel input; returns one channel.
Image to_eval_grayscale(const Image& image);

/// BT.601 luminance without any stretch.
Image luminance(const Image& image);

}  // namespace osketch
