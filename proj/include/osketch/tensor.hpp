// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace osketch {

/// Channel-major latent tensor shape (channels, height, width).
struct LatentShape {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    bool operator==(const LatentShape&) const = default;
};

std::string to_string(const LatentShape& shape);

/// Interleaved HWC image with real-valued samples, nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0);

    std::size_t size() const { return pixels.size(); }
    double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    bool same_shape(const Image& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }
    bool operator==(const Image&) const = default;
};

struct LatentImage {
    LatentShape shape;
    Eigen::VectorXd data;
    std::optional<std::string> source_id;

    LatentImage() = default;
    LatentImage(LatentShape s, Eigen::VectorXd values, std::optional<std::string> id = std::nullopt);

    static LatentImage zeros(LatentShape s);
    static LatentImage constant(LatentShape s, double value);
};

/// Throws NonFiniteError naming `what` if any sample is NaN or infinite.
void require_finite(const Image& image, const char* what);
void require_finite(const Eigen::Ref<const Eigen::VectorXd>& values, const char* what);

/// Throws ShapeError unless `latent` has exactly `expected` shape and matching storage.
void require_shape(const LatentImage& latent, const LatentShape& expected, const char* what);

bool bitwise_equal(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b);

}  // namespace osketch
