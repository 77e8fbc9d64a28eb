#pragma once

#include <filesystem>

#include "anyglyph/tensor.hpp"

namespace anyglyph {

/// RGB image, channel-first {3, H, W}, values in [0, 1].
using Image = Tensor;

inline int image_height(const Image& img) { return img.dim(1); }
inline int image_width(const Image& img) { return img.dim(2); }

Image make_image(int height, int width, double r, double g, double b);

/// Throws ShapeMismatch unless `img` is {3, H, W}.
void require_rgb(const Image& img, const char* what);

/// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Rounds every value to the nearest of the 256 levels a PNG round trip keeps.
Image quantize8(const Image& img);

/// Nearest-neighbour rescale to `size` x `size`.
Image resize_nearest(const Image& img, int size);

}  // namespace anyglyph
