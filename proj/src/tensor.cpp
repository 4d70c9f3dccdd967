// SPDX-License-Identifier: Apache-2.0
#include "osketch/tensor.hpp"

#include "osketch/errors.hpp"

#include <cmath>
#include <cstring>

namespace osketch {

std::string to_string(const LatentShape& shape) {
    return "(" + std::to_string(shape.channels) + ", " + std::to_string(shape.height) + ", " +
           std::to_string(shape.width) + ")";
}

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {}

LatentImage::LatentImage(LatentShape s, Eigen::VectorXd values, std::optional<std::string> id)
    : shape(s), data(std::move(values)), source_id(std::move(id)) {
    if (static_cast<std::size_t>(data.size()) != shape.size()) {
        throw ShapeError("latent storage of " + std::to_string(data.size()) + " entries does not match shape " +
                         to_string(shape));
    }
}

LatentImage LatentImage::zeros(LatentShape s) {
    return {s, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.size()))};
}

LatentImage LatentImage::constant(LatentShape s, double value) {
    return {s, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(s.size()), value)};
}

void require_finite(const Image& image, const char* what) {
    for (double v : image.pixels) {
        if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + ": non-finite pixel value");
    }
}

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& values, const char* what) {
    if (!values.allFinite()) throw NonFiniteError(std::string(what) + ": non-finite entry");
}

void require_shape(const LatentImage& latent, const LatentShape& expected, const char* what) {
    if (!(latent.shape == expected) || static_cast<std::size_t>(latent.data.size()) != expected.size()) {
        throw ShapeError(std::string(what) + ": expected latent shape " + to_string(expected) + ", got " +
                         to_string(latent.shape));
    }
}

bool bitwise_equal(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double x = a(i, j);
            const double y = b(i, j);
            if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
        }
    }
    return true;
}

}  // namespace osketch
