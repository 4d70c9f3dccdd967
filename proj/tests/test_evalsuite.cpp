// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "osketch/errors.hpp"
#include "osketch/evalsuite.hpp"
#include "osketch/toy_backend.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

using namespace osketch;
using namespace osketch::testing;

namespace {

// Straight-line SSIM: centered second moments, explicit window weights.
double oracle_ssim(const Image& a, const Image& b) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            std::vector<std::array<double, 3>> win;  // weight, a, b
            for (int yy = std::max(0, y - 5); yy <= std::min(a.height - 1, y + 5); ++yy) {
                for (int xx = std::max(0, x - 5); xx <= std::min(a.width - 1, x + 5); ++xx) {
                    const double r2 = (yy - y) * (yy - y) + (xx - x) * (xx - x);
                    win.push_back({std::exp(-r2 / 4.5), a.at(yy, xx, 0), b.at(yy, xx, 0)});
                }
            }
            double w = 0, ma = 0, mb = 0;
            for (auto& [wt, va, vb] : win) {
                w += wt;
                ma += wt * va;
                mb += wt * vb;
            }
            ma /= w;
            mb /= w;
            double va2 = 0, vb2 = 0, cov = 0;
            for (auto& [wt, va, vb] : win) {
                va2 += wt * (va - ma) * (va - ma);
                vb2 += wt * (vb - mb) * (vb - mb);
                cov += wt * (va - ma) * (vb - mb);
            }
            va2 /= w;
            vb2 /= w;
            cov /= w;
            total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va2 + vb2 + c2));
        }
    }
    return total / (a.height * a.width);
}

// Straight-line toy perceptual pipeline.
std::vector<Eigen::MatrixXd> oracle_features(const ToyBackend& b, Image img) {
    std::vector<Eigen::MatrixXd> out;
    for (int layer = 0; layer < 3; ++layer) {
        if (layer > 0) {
            Image half((img.height + 1) / 2, (img.width + 1) / 2, 3);
            for (int y = 0; y < half.height; ++y) {
                for (int x = 0; x < half.width; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        double s = 0;
                        int n = 0;
                        for (int yy = 2 * y; yy < std::min(2 * y + 2, img.height); ++yy) {
                            for (int xx = 2 * x; xx < std::min(2 * x + 2, img.width); ++xx) {
                                s += img.at(yy, xx, c);
                                ++n;
                            }
                        }
                        half.at(y, x, c) = s / n;
                    }
                }
            }
            img = half;
        }
        const Eigen::MatrixXd& P = b.parameters().perceptual[static_cast<std::size_t>(layer)];
        Eigen::MatrixXd f(img.height * img.width, P.rows());
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                Eigen::VectorXd patch(27);
                int k = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        for (int c = 0; c < 3; ++c) {
                            patch[k++] = img.at(std::clamp(y + dy, 0, img.height - 1),
                                                std::clamp(x + dx, 0, img.width - 1), c) -
                                         0.5;
                        }
                    }
                }
                f.row(y * img.width + x) = (P * patch).array().tanh().matrix().transpose();
            }
        }
        out.push_back(f);
    }
    return out;
}

double oracle_lpips(const ToyBackend& b, const Image& x, const Image& y) {
    const auto fx = oracle_features(b, x), fy = oracle_features(b, y);
    double total = 0;
    for (std::size_t l = 0; l < fx.size(); ++l) {
        double s = 0;
        for (Eigen::Index p = 0; p < fx[l].rows(); ++p) {
            const Eigen::RowVectorXd u = fx[l].row(p) / (fx[l].row(p).norm() + 1e-10);
            const Eigen::RowVectorXd v = fy[l].row(p) / (fy[l].row(p).norm() + 1e-10);
            s += (u - v).squaredNorm();
        }
        total += s / static_cast<double>(fx[l].rows());
    }
    return total;
}

// Frechet distance through the eigenvalues of S1 S2 (non-symmetric route).
double oracle_fid(const ToyBackend& b, const std::vector<Image>& xs, const std::vector<Image>& ys) {
    const auto stats = [&](const std::vector<Image>& imgs) {
        Eigen::MatrixXd F(static_cast<Eigen::Index>(imgs.size()), 24);
        for (std::size_t i = 0; i < imgs.size(); ++i) {
            const auto layers = oracle_features(b, imgs[i]);
            for (int l = 0; l < 3; ++l) F.row(static_cast<Eigen::Index>(i)).segment(8 * l, 8) = layers[l].colwise().mean();
        }
        const Eigen::RowVectorXd mu = F.colwise().mean();
        const Eigen::MatrixXd C = F.rowwise() - mu;
        return std::make_pair(Eigen::VectorXd(mu.transpose()), Eigen::MatrixXd(C.transpose() * C / (F.rows() - 1.0)));
    };
    const auto [m1, s1] = stats(xs);
    const auto [m2, s2] = stats(ys);
    const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(s1 * s2).eigenvalues();
    double tr = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) tr += std::sqrt(std::max(0.0, ev[i].real()));
    return (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr;
}

Image checkerboard(int n) {
    Image img(n, n, 1);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) img.at(y, x, 0) = (x + y) % 2 ? 0.75 : 0.25;
    }
    return img;
}

}  // namespace

TEST_CASE("ssim closed forms") {
    const Image a = random_image(12, 9, 1, 1);
    CHECK(ssim(a, a) == 1.0);
    const double sc = ssim(Image(16, 16, 1, 0.0), Image(16, 16, 1, 1.0));
    CHECK(std::abs(sc - 1e-4 / (1.0 + 1e-4)) < 1e-12);
    CHECK(sc == doctest::Approx(9.999e-5).epsilon(1e-4));

    const Image c = checkerboard(11);
    Image inv = c;
    for (double& v : inv.pixels) v = 1.0 - v;
    CHECK(ssim(c, inv) <= 0.0);

    const Image b = random_image(12, 9, 2, 1);
    CHECK(std::abs(ssim(a, b) - oracle_ssim(a, b)) < 1e-12);
    CHECK(ssim(a, b) == ssim(b, a));
    CHECK(ssim_map(a, b).height == 12);
    CHECK_THROWS_AS(ssim(a, random_image(12, 9, 2, 3)), ShapeError);
    CHECK_THROWS_AS(ssim(a, random_image(9, 12, 2, 1)), ShapeError);
}

TEST_CASE("lpips") {
    const ToyBackend b;
    const Image x = random_image(8, 8, 3);
    const Image y = random_image(8, 8, 4);
    CHECK(lpips(b, x, x) == 0.0);
    CHECK(lpips(b, x, y) == lpips(b, y, x));
    CHECK(lpips(b, x, y) > 0.0);
    CHECK(std::abs(lpips(b, x, y) - oracle_lpips(b, x, y)) < 1e-12);
    CHECK_THROWS_AS(lpips(b, x, random_image(4, 4, 1)), ShapeError);
}

TEST_CASE("frechet distance closed forms") {
    const auto stats = [](Eigen::VectorXd mu, Eigen::MatrixXd sigma) { return FeatureStats{mu, sigma, 10}; };
    CHECK(frechet_distance(stats(Eigen::VectorXd::Constant(1, 0.0), Eigen::MatrixXd::Identity(1, 1)),
                           stats(Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Identity(1, 1))) ==
          doctest::Approx(9.0).epsilon(1e-12));
    CHECK(std::abs(frechet_distance(stats(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)),
                                    stats(Eigen::VectorXd::Zero(2), 4 * Eigen::MatrixXd::Identity(2, 2))) -
                   2.0) < 1e-10);
    Eigen::MatrixXd s(3, 3);
    s << 2, 0.5, 0.1, 0.5, 1, 0.2, 0.1, 0.2, 0.7;
    const auto same = stats(Eigen::VectorXd::Ones(3), s);
    CHECK(std::abs(frechet_distance(same, same)) < 1e-8);

    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
    bad(1, 1) = -1.0;
    CHECK_THROWS_AS(frechet_distance(stats(Eigen::VectorXd::Zero(2), bad),
                                     stats(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2))),
                    NotPsdError);
    CHECK_THROWS_AS(frechet_distance(FeatureStats{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 1},
                                     stats(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1))),
                    InsufficientSamplesError);
}

TEST_CASE("feature statistics") {
    std::vector<Eigen::VectorXd> rows = {Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 2), Eigen::Vector2d(5, 8)};
    const FeatureStats s = compute_feature_stats(rows);
    CHECK(s.n == 3);
    CHECK(s.mu[0] == doctest::Approx(3.0));
    CHECK(s.sigma(0, 0) == doctest::Approx(4.0));
    CHECK(s.sigma(1, 1) == doctest::Approx(12.0));
    CHECK(s.sigma(0, 1) == doctest::Approx(6.0));
    CHECK_THROWS_AS(compute_feature_stats({Eigen::Vector2d(1, 1)}), InsufficientSamplesError);
}

TEST_CASE("fid behaviour") {
    const ToyBackend b;
    const auto noise_set = [](std::uint64_t seed, int n) {
        std::vector<Image> out;
        for (int i = 0; i < n; ++i) out.push_back(random_image(8, 8, derive_seed(seed, std::to_string(i))));
        return out;
    };
    const auto a500 = noise_set(1, 500);
    CHECK(std::abs(fid(b, a500, a500)) < 1e-6);

    const double small = fid(b, noise_set(2, 50), noise_set(3, 50));
    const double large = fid(b, a500, noise_set(4, 500));
    CHECK(large < small);
    CHECK(large < 0.05);

    std::vector<Image> constant;
    for (int i = 0; i < 500; ++i) constant.push_back(Image(8, 8, 3, (i % 10) / 10.0));
    CHECK(fid(b, a500, constant) > large);
    CHECK_THROWS_AS(fid(b, {random_image(8, 8, 1)}, a500), InsufficientSamplesError);
}

TEST_CASE("evaluate_run") {
    const ToyBackend b;
    TempDir dir("eval");
    write_fixture(dir.path(), {{"p1", "cufs"}, {"p2", "wild"}, {"p3", "internet"}}, 8);
    const DatasetManifest m = load_manifest(dir.path());

    SUBCASE("ground truth scores perfectly") {
        std::vector<LabeledImage> outs;
        for (const auto& e : m.entries) outs.emplace_back(e.id, load_image(e.sketch_path));
        const MetricReport r = evaluate_run(b, outs, m, {1.5, 0.25}, "abc");
        CHECK(r.ssim_mean == 1.0);
        CHECK(r.lpips_mean == 0.0);
        REQUIRE(r.fid);
        CHECK(std::abs(*r.fid) < 1e-6);
        CHECK(r.timings.train_wall_s == 1.5);
    }

    SUBCASE("three synthetic pairs match the oracle") {
        std::vector<LabeledImage> outs;
        std::vector<Image> gen, truth;
        double s = 0, l = 0;
        for (const std::string id : {"p3", "p1", "p2"}) {
            const Image out = random_image(8, 8, derive_seed(99, id));
            outs.emplace_back(id, out);
        }
        for (const std::string id : {"p1", "p2", "p3"}) {
            const Image out = random_image(8, 8, derive_seed(99, id));
            const Image ref = load_image(m.find(id).sketch_path);
            s += oracle_ssim(to_eval_grayscale(out), to_eval_grayscale(ref));
            l += oracle_lpips(b, out, ref);
            gen.push_back(out);
            truth.push_back(ref);
        }
        const MetricReport r = evaluate_run(b, outs, m, {}, "h");
        REQUIRE(r.per_image.size() == 3);
        CHECK(r.per_image[0].id == "p1");
        CHECK(r.per_image[2].id == "p3");
        CHECK(std::abs(r.ssim_mean - s / 3) < 1e-9);
        CHECK(std::abs(r.lpips_mean - l / 3) < 1e-9);
        REQUIRE(r.fid);
        // The oracle takes square roots of numerically-zero eigenvalues, so it is looser.
        CHECK(std::abs(*r.fid - oracle_fid(b, gen, truth)) < 1e-6);

        write_report(r, dir.path() / "report");
        std::ifstream js(dir.path() / "report" / "report.json");
        const auto j = nlohmann::json::parse(js);
        CHECK(j["n_images"] == 3);
        CHECK(j["per_image"][1]["id"] == "p2");
        CHECK(j.contains("train_wall_s"));
        CHECK(j.contains("infer_wall_s_per_image"));
        std::ifstream csv(dir.path() / "report" / "report.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header == "id,ssim,lpips");
    }

    SUBCASE("a single output gets no FID") {
        const MetricReport r = evaluate_run(b, {{"p2", random_image(8, 8, 5)}}, m, {}, "h");
        CHECK_FALSE(r.fid.has_value());
        CHECK(r.per_image.size() == 1);
        CHECK(nlohmann::json::parse(report_to_json(r))["fid"].is_null());
    }

    SUBCASE("bad inputs") {
        CHECK_THROWS_AS(evaluate_run(b, {}, m, {}, "h"), DatasetError);
        CHECK_THROWS_AS(evaluate_run(b, {{"zz", random_image(8, 8, 5)}}, m, {}, "h"), DatasetError);
    }

    SUBCASE("references are resized to the output") {
        const MetricReport r = evaluate_run(b, {{"p1", random_image(4, 4, 5)}, {"p2", random_image(4, 4, 6)}}, m, {}, "h");
        CHECK(r.per_image.size() == 2);
    }
}
