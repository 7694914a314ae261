#include "mixseg/image.hpp"

#include <fstream>
#include <string>

#include "mixseg/errors.hpp"

namespace mixseg {

ImageRgb ImageRgb::filled(int height, int width, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ImageRgb image;
  image.height = height;
  image.width = width;
  image.pixels.resize(static_cast<std::size_t>(height) * width * 3);
  for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
    image.pixels[i] = r;
    image.pixels[i + 1] = g;
    image.pixels[i + 2] = b;
  }
  return image;
}

LabelMask LabelMask::filled(int height, int width, std::uint8_t value) {
  LabelMask mask;
  mask.height = height;
  mask.width = width;
  mask.labels.assign(static_cast<std::size_t>(height) * width, value);
  return mask;
}

ImageRgb crop(const ImageRgb& image, int row0, int col0, int side) {
  if (row0 < 0 || col0 < 0 || row0 + side > image.height || col0 + side > image.width) {
    throw DataError("crop window exceeds image bounds");
  }
  ImageRgb out;
  out.height = side;
  out.width = side;
  out.pixels.resize(static_cast<std::size_t>(side) * side * 3);
  for (int r = 0; r < side; ++r) {
    const std::uint8_t* src = image.at(row0 + r, col0);
    std::copy(src, src + static_cast<std::size_t>(side) * 3, out.pixels.begin() + static_cast<std::size_t>(r) * side * 3);
  }
  return out;
}

LabelMask crop(const LabelMask& mask, int row0, int col0, int side) {
  if (row0 < 0 || col0 < 0 || row0 + side > mask.height || col0 + side > mask.width) {
    throw DataError("crop window exceeds mask bounds");
  }
  LabelMask out;
  out.height = side;
  out.width = side;
  out.labels.resize(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r) {
    const std::uint8_t* src = mask.labels.data() + static_cast<std::size_t>(row0 + r) * mask.width + col0;
    std::copy(src, src + side, out.labels.begin() + static_cast<std::size_t>(r) * side);
  }
  return out;
}

namespace {

void write_binary(const std::filesystem::path& path, const std::string& magic, int width, int height,
                  const std::vector<std::uint8_t>& payload) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << magic << "\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

struct PnmHeader {
  int width = 0;
  int height = 0;
};

int read_pnm_int(std::istream& in, const std::filesystem::path& path) {
  // Skips whitespace and '#' comment lines between header fields.
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value;
  if (!(in >> value)) throw FormatError("malformed header in " + path.string());
  return value;
}

PnmHeader read_pnm_header(std::istream& in, const std::filesystem::path& path, const std::string& expected_magic) {
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != expected_magic) {
    throw FormatError(path.string() + " is not a " + expected_magic + " file");
  }
  PnmHeader header;
  header.width = read_pnm_int(in, path);
  header.height = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (maxval != 255) throw FormatError(path.string() + " must use maxval 255, got " + std::to_string(maxval));
  in.get();  // single whitespace separating header from payload
  if (header.width <= 0 || header.height <= 0) throw FormatError("empty raster in " + path.string());
  return header;
}

void read_payload(std::istream& in, std::vector<std::uint8_t>& payload, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw FormatError(path.string() + " is truncated");
  }
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const ImageRgb& image) {
  write_binary(path, "P6", image.width, image.height, image.pixels);
}

ImageRgb read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const PnmHeader header = read_pnm_header(in, path, "P6");
  ImageRgb image;
  image.width = header.width;
  image.height = header.height;
  image.pixels.resize(static_cast<std::size_t>(header.width) * header.height * 3);
  read_payload(in, image.pixels, path);
  return image;
}

void write_pgm(const std::filesystem::path& path, const LabelMask& mask) {
  write_binary(path, "P5", mask.width, mask.height, mask.labels);
}

LabelMask read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const PnmHeader header = read_pnm_header(in, path, "P5");
  LabelMask mask;
  mask.width = header.width;
  mask.height = header.height;
  mask.labels.resize(static_cast<std::size_t>(header.width) * header.height);
  read_payload(in, mask.labels, path);
  return mask;
}

}  // namespace mixseg
