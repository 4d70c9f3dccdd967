// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/tensor.hpp"

#include <filesystem>

namespace osketch {

/// Decodes an 8-bit PNG/JPEG into an RGB image in [0, 1].
Image load_image(const std::filesystem::path& path);

/// Writes an 8-bit PNG (values clamped to [0, 1], rounded to the nearest level).
void save_png(const std::filesystem::path& path, const Image& image);

/// Area-interpolated resize; returns the input unchanged when the size already matches.
Image resize_image(const Image& image, int height, int width);

/// Quantizes to 8-bit levels and back, as a PNG round-trip would.
Image quantize_8bit(const Image& image);

}  // namespace osketch
