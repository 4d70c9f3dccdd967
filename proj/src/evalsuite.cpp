// SPDX-License-Identifier: Apache-2.0
#include "osketch/evalsuite.hpp"

#include "osketch/errors.hpp"
#include "osketch/image_io.hpp"
#include "osketch/instruction.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace osketch {

namespace {

std::array<double, kSsimWindow> gaussian_taps() {
    std::array<double, kSsimWindow> taps{};
    const int half = kSsimWindow / 2;
    for (int k = -half; k <= half; ++k) taps[static_cast<std::size_t>(k + half)] = std::exp(-(k * k) / (2.0 * kSsimSigma * kSsimSigma));
    return taps;
}

void check_gray_pair(const Image& a, const Image& b, const char* what) {
    if (a.channels != 1 || b.channels != 1) throw ShapeError(std::string(what) + ": expects single-channel images");
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": image shapes differ");
    if (a.pixels.empty()) throw ShapeError(std::string(what) + ": empty image");
    require_finite(a, what);
    require_finite(b, what);
}

}  // namespace

Image ssim_map(const Image& a, const Image& b) {
    check_gray_pair(a, b, "ssim");
    static const auto taps = gaussian_taps();
    const int half = kSsimWindow / 2;
    Image out(a.height, a.width, 1);
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            double wsum = 0.0, sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (int dy = -half; dy <= half; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= a.height) continue;
                for (int dx = -half; dx <= half; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= a.width) continue;
                    const double w = taps[static_cast<std::size_t>(dy + half)] * taps[static_cast<std::size_t>(dx + half)];
                    const double va = a.at(yy, xx, 0);
                    const double vb = b.at(yy, xx, 0);
                    wsum += w;
                    sa += w * va;
                    sb += w * vb;
                    saa += w * (va * va);
                    sbb += w * (vb * vb);
                    sab += w * (va * vb);
                }
            }
            const double mu_a = sa / wsum;
            const double mu_b = sb / wsum;
            const double var_a = saa / wsum - mu_a * mu_a;
            const double var_b = sbb / wsum - mu_b * mu_b;
            const double cov = sab / wsum - mu_a * mu_b;
            out.at(y, x, 0) = ((2.0 * (mu_a * mu_b) + kSsimC1) * (2.0 * cov + kSsimC2)) /
                              ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
        }
    }
    return out;
}

double ssim(const Image& a, const Image& b) {
    const Image map = ssim_map(a, b);
    double sum = 0.0;
    for (double v : map.pixels) sum += v;
    return sum / static_cast<double>(map.pixels.size());
}

double lpips(const Backend& backend, const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width) throw ShapeError("lpips: image sizes differ");
    const auto fa = backend.perceptual_features(a);
    const auto fb = backend.perceptual_features(b);
    if (fa.size() != fb.size()) throw ShapeError("lpips: layer count mismatch");
    double total = 0.0;
    for (std::size_t layer = 0; layer < fa.size(); ++layer) {
        const auto& la = fa[layer];
        const auto& lb = fb[layer];
        if (la.rows() != lb.rows() || la.cols() != lb.cols()) throw ShapeError("lpips: feature shape mismatch");
        double layer_sum = 0.0;
        for (Eigen::Index p = 0; p < la.rows(); ++p) {
            const Eigen::RowVectorXd na = la.row(p) / (la.row(p).norm() + 1e-10);
            const Eigen::RowVectorXd nb = lb.row(p) / (lb.row(p).norm() + 1e-10);
            layer_sum += (na - nb).squaredNorm();
        }
        total += layer_sum / static_cast<double>(la.rows());
    }
    return total;
}

void FeatureStats::validate() const {
    if (n < 2) throw InsufficientSamplesError("feature statistics need n >= 2, got " + std::to_string(n));
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size()) throw ShapeError("feature stats: shape mismatch");
    if (!mu.allFinite() || !sigma.allFinite()) throw NonFiniteError("feature stats: non-finite entries");
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw Error("feature stats: covariance not symmetric");
}

FeatureStats compute_feature_stats(const std::vector<Eigen::VectorXd>& features) {
    if (features.size() < 2) {
        throw InsufficientSamplesError("need at least 2 feature vectors, got " + std::to_string(features.size()));
    }
    const Eigen::Index d = features.front().size();
    FeatureStats stats;
    stats.n = static_cast<int>(features.size());
    stats.mu = Eigen::VectorXd::Zero(d);
    for (const auto& f : features) {
        if (f.size() != d) throw ShapeError("feature vectors differ in length");
        stats.mu += f;
    }
    stats.mu /= static_cast<double>(stats.n);
    stats.sigma = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : features) {
        const Eigen::VectorXd c = f - stats.mu;
        stats.sigma.noalias() += c * c.transpose();
    }
    stats.sigma /= static_cast<double>(stats.n - 1);
    stats.sigma = 0.5 * (stats.sigma + stats.sigma.transpose()).eval();
    return stats;
}

namespace {

// Symmetric PSD square root with tolerance-based clipping of tiny negative eigenvalues.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double* trace_of_sqrt) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    if (eig.info() != Eigen::Success) throw Error("eigendecomposition failed");
    Eigen::VectorXd values = eig.eigenvalues();
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values[i] < -kPsdTolerance * scale) {
            throw NotPsdError("matrix is not PSD (eigenvalue " + std::to_string(values[i]) + ")");
        }
        values[i] = std::sqrt(std::max(values[i], 0.0));
    }
    if (trace_of_sqrt != nullptr) *trace_of_sqrt = values.sum();
    return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& s1, const FeatureStats& s2) {
    s1.validate();
    s2.validate();
    if (s1.mu.size() != s2.mu.size()) throw ShapeError("frechet_distance: feature dimensions differ");
    const double mean_term = (s1.mu - s2.mu).squaredNorm();
    // Tr (S1 S2)^{1/2} = Tr (S1^{1/2} S2 S1^{1/2})^{1/2}, which keeps everything symmetric.
    const Eigen::MatrixXd root1 = psd_sqrt(s1.sigma, nullptr);
    Eigen::MatrixXd inner = root1 * s2.sigma * root1;
    inner = 0.5 * (inner + inner.transpose()).eval();
    psd_sqrt(s2.sigma, nullptr);  // validates S2
    double trace_sqrt = 0.0;
    psd_sqrt(inner, &trace_sqrt);
    return mean_term + s1.sigma.trace() + s2.sigma.trace() - 2.0 * trace_sqrt;
}

double fid(const Backend& backend, const std::vector<Image>& images_a, const std::vector<Image>& images_b) {
    if (images_a.size() < 2 || images_b.size() < 2) {
        throw InsufficientSamplesError("FID needs at least 2 images per set (got " + std::to_string(images_a.size()) +
                                       " and " + std::to_string(images_b.size()) + ")");
    }
    std::vector<Eigen::VectorXd> fa, fb;
    fa.reserve(images_a.size());
    fb.reserve(images_b.size());
    for (const auto& img : images_a) fa.push_back(backend.distribution_features(img));
    for (const auto& img : images_b) fb.push_back(backend.distribution_features(img));
    return frechet_distance(compute_feature_stats(fa), compute_feature_stats(fb));
}

MetricReport evaluate_run(const Backend& backend, const std::vector<LabeledImage>& outputs,
                          const std::map<std::string, Image>& references, const RunTimings& timings,
                          const std::string& config_hash) {
    if (outputs.empty()) throw DatasetError("no outputs to evaluate");
    std::vector<std::string> unknown;
    for (const auto& [id, img] : outputs) {
        if (!references.contains(id)) unknown.push_back(id);
    }
    if (!unknown.empty()) {
        std::string msg = "outputs without a reference sketch:";
        for (const auto& id : unknown) msg += " " + id;
        throw DatasetError(msg);
    }

    std::vector<const LabeledImage*> ordered;
    for (const auto& o : outputs) ordered.push_back(&o);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->first < b->first; });
    for (std::size_t i = 1; i < ordered.size(); ++i) {
        if (ordered[i]->first == ordered[i - 1]->first) throw DatasetError("duplicate output id " + ordered[i]->first);
    }

    MetricReport report;
    report.timings = timings;
    report.config_hash = config_hash;
    report.normalization = "bt601 luminance + nearest-rank p1/p99 contrast stretch, both sides";

    std::vector<Image> generated, truth;
    double ssim_sum = 0.0, lpips_sum = 0.0;
    for (const auto* o : ordered) {
        const Image& out = o->second;
        const Image ref = resize_image(references.at(o->first), out.height, out.width);
        PerImageMetrics m;
        m.id = o->first;
        m.ssim = ssim(to_eval_grayscale(out), to_eval_grayscale(ref));
        m.lpips = lpips(backend, out, ref);
        ssim_sum += m.ssim;
        lpips_sum += m.lpips;
        report.per_image.push_back(m);
        generated.push_back(out);
        truth.push_back(ref);
    }
    const auto n = static_cast<double>(report.per_image.size());
    report.ssim_mean = ssim_sum / n;
    report.lpips_mean = lpips_sum / n;
    if (generated.size() >= 2) report.fid = fid(backend, generated, truth);
    return report;
}

MetricReport evaluate_run(const Backend& backend, const std::vector<LabeledImage>& outputs,
                          const DatasetManifest& refs, const RunTimings& timings, const std::string& config_hash) {
    std::map<std::string, Image> references;
    std::vector<std::string> unknown;
    for (const auto& [id, img] : outputs) {
        if (!refs.contains(id)) {
            unknown.push_back(id);
            continue;
        }
        references.emplace(id, load_image(refs.find(id).sketch_path));
    }
    if (!unknown.empty()) {
        std::string msg = "outputs not in the manifest:";
        for (const auto& id : unknown) msg += " " + id;
        throw DatasetError(msg);
    }
    return evaluate_run(backend, outputs, references, timings, config_hash);
}

std::string report_to_json(const MetricReport& report) {
    nlohmann::ordered_json j;
    j["ssim_mean"] = report.ssim_mean;
    j["lpips_mean"] = report.lpips_mean;
    j["fid"] = report.fid ? nlohmann::ordered_json(*report.fid) : nlohmann::ordered_json(nullptr);
    j["n_images"] = report.per_image.size();
    j["normalization"] = report.normalization;
    j["config_hash"] = report.config_hash;
    j["train_wall_s"] = report.timings.train_wall_s;
    j["infer_wall_s_per_image"] = report.timings.infer_wall_s_per_image;
    auto& rows = j["per_image"] = nlohmann::ordered_json::array();
    for (const auto& m : report.per_image) {
        nlohmann::ordered_json row;
        row["id"] = m.id;
        row["ssim"] = m.ssim;
        row["lpips"] = m.lpips;
        rows.push_back(std::move(row));
    }
    return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "id,ssim,lpips\n";
    for (const auto& m : report.per_image) out << m.id << ',' << m.ssim << ',' << m.lpips << '\n';
    out << "mean," << report.ssim_mean << ',' << report.lpips_mean << '\n';
    return out.str();
}

void write_report(const MetricReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto write = [&](const char* name, const std::string& text) {
        write_file_atomic(dir / name, std::vector<std::uint8_t>(text.begin(), text.end()));
    };
    write("report.json", report_to_json(report));
    write("report.csv", report_to_csv(report));
}

}  // namespace osketch
