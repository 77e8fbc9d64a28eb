#include "anyglyph/image.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <vector>

namespace anyglyph {

Image make_image(int height, int width, double r, double g, double b) {
  Image img({3, height, width});
  const Eigen::Index plane = Eigen::Index(height) * width;
  img.data().segment(0, plane).setConstant(r);
  img.data().segment(plane, plane).setConstant(g);
  img.data().segment(2 * plane, plane).setConstant(b);
  return img;
}

void require_rgb(const Image& img, const char* what) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw ShapeMismatch(std::string(what) + ": expected a {3, H, W} image, got " + img.shape());
  }
}

namespace {

std::uint8_t to_byte(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  require_rgb(img, "write_png");
  const int h = img.dim(1), w = img.dim(2);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(img.at(c, y, x));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IOFailure("cannot write " + path.string() + ": " + msg);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IOFailure("cannot read " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IOFailure("cannot decode " + path.string() + ": " + msg);
  }
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  Image img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

Image quantize8(const Image& img) {
  Image out = img;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = to_byte(out[i]) / 255.0;
  return out;
}

Image resize_nearest(const Image& img, int size) {
  require_rgb(img, "resize_nearest");
  const int h = img.dim(1), w = img.dim(2);
  if (h == size && w == size) return img;
  Image out({3, size, size});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, y * h / size, x * w / size);
  return out;
}

}  // namespace anyglyph
