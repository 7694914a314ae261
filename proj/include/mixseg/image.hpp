#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mixseg {

// 8-bit RGB raster, row-major, interleaved channels.
struct ImageRgb {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  static ImageRgb filled(int height, int width, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  std::uint8_t* at(int row, int col) { return pixels.data() + 3 * (static_cast<std::size_t>(row) * width + col); }
  const std::uint8_t* at(int row, int col) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(row) * width + col);
  }
};

// 8-bit single-channel raster holding class labels (or 0/1 for binary masks).
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;  // height * width

  static LabelMask filled(int height, int width, std::uint8_t value);

  std::uint8_t& at(int row, int col) { return labels[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
};

ImageRgb crop(const ImageRgb& image, int row0, int col0, int side);
LabelMask crop(const LabelMask& mask, int row0, int col0, int side);

// Binary PPM (P6) / PGM (P5), maxval 255.
void write_ppm(const std::filesystem::path& path, const ImageRgb& image);
ImageRgb read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMask& mask);
LabelMask read_pgm(const std::filesystem::path& path);

}  // namespace mixseg
