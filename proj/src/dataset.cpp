// SPDX-License-Identifier: Apache-2.0
#include "osketch/dataset.hpp"

#include "osketch/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace osketch {

std::string_view to_string(Subset subset) {
    switch (subset) {
        case Subset::cufs: return "cufs";
        case Subset::cufsf: return "cufsf";
        case Subset::wild: return "wild";
        case Subset::internet: return "internet";
    }
    return "unknown";
}

Subset parse_subset(std::string_view text) {
    if (text == "cufs") return Subset::cufs;
    if (text == "cufsf") return Subset::cufsf;
    if (text == "wild") return Subset::wild;
    if (text == "internet") return Subset::internet;
    throw DatasetError("unknown subset '" + std::string(text) + "' (expected cufs|cufsf|wild|internet)");
}

const ManifestEntry& DatasetManifest::find(std::string_view id) const {
    for (const auto& e : entries) {
        if (e.id == id) return e;
    }
    throw DatasetError("unknown id '" + std::string(id) + "'");
}

bool DatasetManifest::contains(std::string_view id) const {
    return std::any_of(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.id == id; });
}

std::map<Subset, int> DatasetManifest::subset_counts() const {
    std::map<Subset, int> counts{{Subset::cufs, 0}, {Subset::cufsf, 0}, {Subset::wild, 0}, {Subset::internet, 0}};
    for (const auto& e : entries) ++counts[e.subset];
    return counts;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    const fs::path file = root / kManifestFile;
    std::ifstream in(file);
    if (!in) throw DatasetError("missing manifest: " + file.string());

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError("malformed manifest " + file.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
        throw DatasetError("manifest " + file.string() + " has no 'entries' array");
    }

    DatasetManifest manifest;
    manifest.root = root;
    std::set<std::string> seen;
    std::vector<std::string> missing;
    std::size_t index = 0;
    for (const auto& item : doc["entries"]) {
        const auto field = [&](const char* key) -> std::string {
            if (!item.is_object() || !item.contains(key) || !item[key].is_string()) {
                throw DatasetError("manifest entry " + std::to_string(index) + " lacks string field '" + key + "'");
            }
            return item[key].get<std::string>();
        };
        ManifestEntry e;
        e.id = field("id");
        e.photo_path = root / field("photo");
        e.sketch_path = root / field("sketch");
        e.subset = parse_subset(field("subset"));
        if (!seen.insert(e.id).second) throw DatasetError("duplicate id '" + e.id + "' in manifest");
        if (!fs::exists(e.photo_path)) missing.push_back(e.id + " (photo " + e.photo_path.string() + ")");
        if (!fs::exists(e.sketch_path)) missing.push_back(e.id + " (sketch " + e.sketch_path.string() + ")");
        manifest.entries.push_back(std::move(e));
        ++index;
    }
    if (!missing.empty()) {
        std::string msg = "manifest references missing files:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw DatasetError(msg);
    }
    return manifest;
}

OneShotSplit one_shot_split(const DatasetManifest& manifest, std::string_view train_id) {
    OneShotSplit split;
    split.train = manifest.find(train_id);
    split.eval.reserve(manifest.entries.size() - 1);
    for (const auto& e : manifest.entries) {
        if (e.id != train_id) split.eval.push_back(e);
    }
    return split;
}

Image luminance(const Image& image) {
    if (image.channels == 1) return image;
    if (image.channels != 3) {
        throw ShapeError("expected a 1- or 3-channel image, got " + std::to_string(image.channels) + " channels");
    }
    Image y(image.height, image.width, 1);
    for (std::size_t i = 0; i < y.pixels.size(); ++i) {
        // 0.299 r + 0.587 g + 0.114 b, written so that r = g = b returns r exactly.
        const double r = image.pixels[3 * i];
        y.pixels[i] = r + 0.587 * (image.pixels[3 * i + 1] - r) + 0.114 * (image.pixels[3 * i + 2] - r);
    }
    return y;
}

Image to_eval_grayscale(const Image& image) {
    require_finite(image, "to_eval_grayscale");
    Image y = luminance(image);
    if (y.pixels.empty()) return y;

    // Nearest-rank percentiles: the sample at each percentile maps exactly to
    // 0 or 1, which makes the stretch idempotent.
    std::vector<double> sorted = y.pixels;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = [&](double q) {
        return sorted[static_cast<std::size_t>(std::lround(q * static_cast<double>(sorted.size() - 1)))];
    };
    const double lo = rank(kStretchLowPercentile);
    const double hi = rank(kStretchHighPercentile);
    for (double& v : y.pixels) {
        if (hi > lo) v = (v - lo) / (hi - lo);
        v = std::clamp(v, 0.0, 1.0);
    }
    return y;
}

}  // namespace osketch
