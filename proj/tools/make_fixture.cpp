// SPDX-License-Identifier: Apache-2.0
// Writes a synthetic dataset (random photos, thresholded "sketches") with the
// 100/110/150/40 subset layout, for trying the pipeline without real data.
#include "osketch/image_io.hpp"
#include "osketch/rng.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace osketch;

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic photo/sketch dataset"};
    fs::path root;
    int size = 8;
    std::uint64_t seed = 0;
    app.add_option("root", root, "Output directory")->required();
    app.add_option("--size", size, "Image side in pixels")->check(CLI::Range(2, 4096));
    app.add_option("--seed", seed, "Random seed");
    CLI11_PARSE(app, argc, argv);

    try {
        fs::create_directories(root / "photos");
        fs::create_directories(root / "sketches");
        nlohmann::json doc{{"entries", nlohmann::json::array()}};
        const std::pair<const char*, int> subsets[] = {{"cufs", 100}, {"cufsf", 110}, {"wild", 150}, {"internet", 40}};
        for (const auto& [subset, count] : subsets) {
            for (int i = 0; i < count; ++i) {
                const std::string id = std::string(subset) + "_" + std::to_string(i);
                Rng rng(derive_seed(seed, id));
                Image photo(size, size, 3);
                for (auto& p : photo.pixels) p = rng.uniform();
                Image sketch(size, size, 3);
                for (int y = 0; y < size; ++y) {
                    for (int x = 0; x < size; ++x) {
                        const double l =
                            0.299 * photo.at(y, x, 0) + 0.587 * photo.at(y, x, 1) + 0.114 * photo.at(y, x, 2);
                        for (int c = 0; c < 3; ++c) sketch.at(y, x, c) = l < 0.35 ? 0.1 : 0.9;
                    }
                }
                save_png(root / "photos" / (id + ".png"), photo);
                save_png(root / "sketches" / (id + ".png"), sketch);
                doc["entries"].push_back(
                    {{"id", id}, {"photo", "photos/" + id + ".png"}, {"sketch", "sketches/" + id + ".png"}, {"subset", subset}});
            }
        }
        std::ofstream(root / "manifest.json") << doc.dump(2) << "\n";
        std::cout << "wrote " << doc["entries"].size() << " pairs to " << root.string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
