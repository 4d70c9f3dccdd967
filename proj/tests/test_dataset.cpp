// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "osketch/dataset.hpp"
#include "osketch/errors.hpp"

#include <doctest.h>

using namespace osketch;
using namespace osketch::testing;

TEST_CASE("load a well-formed manifest") {
    TempDir dir("ds");
    write_fixture(dir.path(), {{"a", "cufs"}, {"b", "cufsf"}, {"c", "wild"}, {"d", "internet"}}, 4);
    const DatasetManifest m = load_manifest(dir.path());
    REQUIRE(m.entries.size() == 4);
    CHECK(m.entries[2].id == "c");
    CHECK(m.entries[2].subset == Subset::wild);
    CHECK(m.entries[0].photo_path == dir.path() / "photos" / "a.png");
    CHECK(m.find("d").subset == Subset::internet);
    CHECK(m.contains("b"));
    CHECK_FALSE(m.contains("z"));
    CHECK_THROWS_AS(m.find("z"), DatasetError);
    const auto counts = m.subset_counts();
    CHECK(counts.at(Subset::cufs) == 1);
}

TEST_CASE("benchmark-shaped fixture counts") {
    TempDir dir("ds");
    write_fixture(dir.path(), os_sketch_entries(), 2);
    const auto counts = load_manifest(dir.path()).subset_counts();
    CHECK(counts.at(Subset::cufs) == 100);
    CHECK(counts.at(Subset::cufsf) == 110);
    CHECK(counts.at(Subset::wild) == 150);
    CHECK(counts.at(Subset::internet) == 40);
}

TEST_CASE("manifest errors") {
    TempDir dir("ds");
    write_fixture(dir.path(), {{"a", "cufs"}, {"a", "wild"}}, 4);
    try {
        (void)load_manifest(dir.path());
        FAIL("duplicate accepted");
    } catch (const DatasetError& e) {
        CHECK(std::string(e.what()).find("duplicate id 'a'") != std::string::npos);
    }

    TempDir missing("ds");
    write_fixture(missing.path(), {{"x", "cufs"}, {"y", "cufs"}}, 4);
    std::filesystem::remove(missing.path() / "sketches" / "y.png");
    try {
        (void)load_manifest(missing.path());
        FAIL("missing file accepted");
    } catch (const DatasetError& e) {
        CHECK(std::string(e.what()).find("y (sketch") != std::string::npos);
    }

    TempDir empty("ds");
    CHECK_THROWS_AS(load_manifest(empty.path()), DatasetError);
    std::ofstream(empty.path() / "manifest.json") << "{ not json";
    CHECK_THROWS_AS(load_manifest(empty.path()), DatasetError);
    std::ofstream(empty.path() / "manifest.json") << R"({"entries": [{"id": "a"}]})";
    CHECK_THROWS_AS(load_manifest(empty.path()), DatasetError);
    CHECK_THROWS_AS(parse_subset("celeba"), DatasetError);
}

TEST_CASE("one-shot split") {
    TempDir dir("ds");
    write_fixture(dir.path(), {{"a", "cufs"}, {"b", "wild"}}, 4);
    const DatasetManifest m = load_manifest(dir.path());
    const OneShotSplit s = one_shot_split(m, "b");
    CHECK(s.train.id == "b");
    REQUIRE(s.eval.size() == 1);
    CHECK(s.eval[0].id == "a");
    CHECK_THROWS_AS(one_shot_split(m, "nope"), DatasetError);
}

TEST_CASE("eval grayscale normalization") {
    const Image white(4, 4, 3, 1.0);
    for (double v : to_eval_grayscale(white).pixels) CHECK(v == 1.0);

    Image red(2, 2, 3, 0.0), green(2, 2, 3, 0.0);
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            red.at(y, x, 0) = 1.0;
            green.at(y, x, 1) = 1.0;
        }
    }
    CHECK(luminance(red).pixels[0] == doctest::Approx(0.299).epsilon(1e-15));
    CHECK(luminance(green).pixels[0] == doctest::Approx(0.587).epsilon(1e-15));
    CHECK(to_eval_grayscale(red).pixels[0] == doctest::Approx(0.299).epsilon(1e-15));

    Image gray(16, 16, 3);
    Rng rng(3);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            const double v = 0.2 + 0.5 * rng.uniform();
            for (int c = 0; c < 3; ++c) gray.at(y, x, c) = v;
        }
    }
    const Image once = to_eval_grayscale(gray);
    CHECK(once.channels == 1);
    CHECK(*std::min_element(once.pixels.begin(), once.pixels.end()) == 0.0);
    CHECK(*std::max_element(once.pixels.begin(), once.pixels.end()) == 1.0);
    Image as_rgb(16, 16, 3);
    for (std::size_t i = 0; i < once.pixels.size(); ++i) {
        as_rgb.pixels[3 * i] = as_rgb.pixels[3 * i + 1] = as_rgb.pixels[3 * i + 2] = once.pixels[i];
    }
    const Image twice = to_eval_grayscale(as_rgb);
    for (std::size_t i = 0; i < once.pixels.size(); ++i) CHECK(std::abs(twice.pixels[i] - once.pixels[i]) < 1e-6);
    CHECK_THROWS_AS(luminance(Image(2, 2, 2)), ShapeError);
}
