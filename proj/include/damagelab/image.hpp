#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace damagelab {

// Interleaved 8-bit RGB raster, row-major. The whole pipeline stores pixels
// as raw bytes; conversion to normalized tensors happens at encode time.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int w, int h, int c = 3, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const ImageU8& other) const {
    return width == other.width && height == other.height &&
           channels == other.channels;
  }
};

ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& image);

// Copies the half-open region [x0,x1) x [y0,y1); caller clamps beforehand.
ImageU8 crop_region(const ImageU8& image, int x0, int y0, int x1, int y1);

// Bilinear resample with half-pixel centers, so same-size resize is the
// identity. Interpolation is a convex combination: output values never
// leave the input range.
ImageU8 resize_bilinear(const ImageU8& image, int out_width, int out_height);

std::uint64_t image_checksum(const ImageU8& image);

}  // namespace damagelab
