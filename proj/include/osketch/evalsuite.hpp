// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/backend.hpp"
#include "osketch/dataset.hpp"
#include "osketch/tensor.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace osketch {

// Canonical SSIM constants for dynamic range 1.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kSsimC1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
inline constexpr double kSsimC2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);

/// Mean local SSIM of two single-channel images. The Gaussian window is
/// truncated at the border and renormalized, so any image size works.
double ssim(const Image& a, const Image& b);

/// Per-pixel SSIM map (same size as the inputs).
Image ssim_map(const Image& a, const Image& b);

/// Perceptual distance from the backend's feature adapter: features are
/// unit-normalized along channels per position, squared differences are
/// averaged over positions and summed over layers.
double lpips(const Backend& backend, const Image& a, const Image& b);

struct FeatureStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    int n = 0;

    void validate() const;
};

/// Mean and unbiased (n - 1) covariance of feature rows, in the order given.
FeatureStats compute_feature_stats(const std::vector<Eigen::VectorXd>& features);

inline constexpr double kPsdTolerance = 1e-8;

/// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).
double frechet_distance(const FeatureStats& s1, const FeatureStats& s2);

/// Frechet distance between the backend's distribution features of two image lists.
double fid(const Backend& backend, const std::vector<Image>& images_a, const std::vector<Image>& images_b);

struct PerImageMetrics {
    std::string id;
    double ssim = 0.0;
    double lpips = 0.0;
};

struct RunTimings {
    double train_wall_s = 0.0;
    double infer_wall_s_per_image = 0.0;
};

struct MetricReport {
    double ssim_mean = 0.0;
    double lpips_mean = 0.0;
    std::optional<double> fid;  // absent when fewer than two outputs
    std::vector<PerImageMetrics> per_image;  // sorted by id
    RunTimings timings;
    std::string config_hash;
    std::string normalization;  // description of the grayscale normalization applied for SSIM
};

using LabeledImage = std::pair<std::string, Image>;

/// Scores generated images against reference sketches. References are
/// resized to the output size; SSIM runs on to_eval_grayscale of both sides,
/// LPIPS and FID on the RGB images. Everything is reduced in id order.
MetricReport evaluate_run(const Backend& backend, const std::vector<LabeledImage>& outputs,
                          const std::map<std::string, Image>& references, const RunTimings& timings,
                          const std::string& config_hash);

/// Same, loading each reference sketch through the manifest.
MetricReport evaluate_run(const Backend& backend, const std::vector<LabeledImage>& outputs,
                          const DatasetManifest& refs, const RunTimings& timings, const std::string& config_hash);

std::string report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);
void write_report(const MetricReport& report, const std::filesystem::path& dir);

/// Monotonic wall-clock stopwatch.
class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    void reset() { start_ = std::chrono::steady_clock::now(); }
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace osketch
