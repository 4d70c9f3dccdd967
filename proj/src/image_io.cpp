// SPDX-License-Identifier: Apache-2.0
#include "osketch/image_io.hpp"

#include "osketch/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace osketch {

namespace {

cv::Mat to_mat_8u(const Image& image) {
    const int type = image.channels == 1 ? CV_8UC1 : image.channels == 3 ? CV_8UC3 : -1;
    if (type < 0) throw ShapeError("save_png: only 1- or 3-channel images are supported");
    cv::Mat mat(image.height, image.width, type);
    for (int y = 0; y < image.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                // OpenCV stores BGR.
                const int src_c = image.channels == 3 ? 2 - c : c;
                const double v = std::clamp(image.at(y, x, src_c), 0.0, 1.0);
                row[x * image.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return mat;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (mat.empty()) throw IoError("cannot decode image: " + path.string());
    Image image(mat.rows, mat.cols, 3);
    for (int y = 0; y < mat.rows; ++y) {
        const auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x) {
            for (int c = 0; c < 3; ++c) image.at(y, x, c) = row[x * 3 + (2 - c)] / 255.0;
        }
    }
    return image;
}

void save_png(const std::filesystem::path& path, const Image& image) {
    require_finite(image, "save_png");
    const cv::Mat mat = to_mat_8u(image);
    if (!cv::imwrite(path.string(), mat, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
        throw IoError("cannot write image: " + path.string());
    }
}

Image resize_image(const Image& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    if (height <= 0 || width <= 0) throw ShapeError("resize_image: target size must be positive");
    cv::Mat src(image.height, image.width, CV_64FC(image.channels), const_cast<double*>(image.pixels.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_AREA);
    Image out(height, width, image.channels);
    std::copy(dst.ptr<double>(0), dst.ptr<double>(0) + out.pixels.size(), out.pixels.begin());
    return out;
}

Image quantize_8bit(const Image& image) {
    Image out = image;
    for (double& v : out.pixels) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
    return out;
}

}  // namespace osketch
