#include "damagelab/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "damagelab/common.hpp"

namespace damagelab {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoFailure("cannot open " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoFailure("png read struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoFailure("png info struct allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoFailure("png decode failed for " + path.string());
  }

  png_init_io(png, file.get());
  png_read_info(png, info);

  // Normalize every input to 8-bit RGB.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  ImageU8 image(static_cast<int>(png_get_image_width(png, info)),
                static_cast<int>(png_get_image_height(png, info)), 3);
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = image.pixels.data() +
              static_cast<std::size_t>(y) * image.width * image.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 3 || image.width <= 0 || image.height <= 0) {
    throw IoFailure("write_png expects a non-empty RGB image");
  }
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoFailure("cannot open " + path.string() + " for writing");

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoFailure("png write struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoFailure("png info struct allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoFailure("png encode failed for " + path.string());
  }

  png_init_io(png, file.get());
  // Fixed compression settings keep output bytes reproducible.
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(
        image.pixels.data() +
        static_cast<std::size_t>(y) * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

ImageU8 crop_region(const ImageU8& image, int x0, int y0, int x1, int y1) {
  if (x1 <= x0 || y1 <= y0 || x0 < 0 || y0 < 0 || x1 > image.width ||
      y1 > image.height) {
    throw InvalidBBox("crop region out of bounds or degenerate");
  }
  ImageU8 out(x1 - x0, y1 - y0, image.channels);
  for (int y = y0; y < y1; ++y) {
    const std::uint8_t* src =
        &image.pixels[(static_cast<std::size_t>(y) * image.width + x0) *
                      image.channels];
    std::uint8_t* dst =
        &out.pixels[static_cast<std::size_t>(y - y0) * out.width *
                    out.channels];
    std::copy(src, src + static_cast<std::size_t>(out.width) * out.channels,
              dst);
  }
  return out;
}

ImageU8 resize_bilinear(const ImageU8& image, int out_width, int out_height) {
  if (image.width <= 0 || image.height <= 0) {
    throw InvalidBBox("resize_bilinear on empty image");
  }
  if (out_width == image.width && out_height == image.height) return image;

  ImageU8 out(out_width, out_height, image.channels);
  const double sx = static_cast<double>(image.width) / out_width;
  const double sy = static_cast<double>(image.height) / out_height;
  for (int oy = 0; oy < out_height; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_width; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1.0 - wx) * image.at(y0, x0, c) +
                           wx * image.at(y0, x1, c);
        const double bottom = (1.0 - wx) * image.at(y1, x0, c) +
                              wx * image.at(y1, x1, c);
        const double value = (1.0 - wy) * top + wy * bottom;
        out.at(oy, ox, c) =
            static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 255.0)));
      }
    }
  }
  return out;
}

std::uint64_t image_checksum(const ImageU8& image) {
  std::uint64_t h = fnv1a64(std::string_view(
      reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size()));
  h = fnv1a64(std::to_string(image.width) + "x" + std::to_string(image.height) +
                  "x" + std::to_string(image.channels),
              h);
  return h;
}

}  // namespace damagelab
