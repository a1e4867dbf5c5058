#include "attg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "attg/error.hpp"

namespace attg {
namespace {

struct NetpbmHeader {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_header(const Bytes& b, const char* magic) {
  if (b.size() < 2 || b[0] != magic[0] || b[1] != magic[1]) throw FormatError(std::string("expected netpbm magic ") + magic);
  std::size_t pos = 2;
  auto next_int = [&]() {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError("malformed netpbm header");
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > 1 << 20) throw FormatError("netpbm dimension too large");
    }
    return static_cast<int>(v);
  };
  NetpbmHeader h;
  h.width = next_int();
  h.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw FormatError("only 8-bit netpbm files are supported");
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError("malformed netpbm header");
  h.data_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0) throw FormatError("netpbm dimensions must be positive");
  return h;
}

Bytes header_bytes(const char* magic, int width, int height) {
  const std::string header = std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  return Bytes(header.begin(), header.end());
}

}  // namespace

std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Bytes encode_ppm(const Image& image) {
  Bytes out = header_bytes("P6", image.width, image.height);
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) out.push_back(quantize_unit(v));
  return out;
}

Image decode_ppm(const Bytes& bytes) {
  const auto h = parse_header(bytes, "P6");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() != h.data_offset + n) throw FormatError("PPM payload size does not match header");
  Image img = Image::zeros(h.height, h.width);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = bytes[h.data_offset + i] / 255.0;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) { write_file(path, encode_ppm(image)); }

Image read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Bytes encode_pgm(const GrayImage& image) {
  Bytes out = header_bytes("P5", image.width, image.height);
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

GrayImage decode_pgm(const Bytes& bytes) {
  const auto h = parse_header(bytes, "P5");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() != h.data_offset + n) throw FormatError("PGM payload size does not match header");
  GrayImage img;
  img.width = h.width;
  img.height = h.height;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end());
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) { write_file(path, encode_pgm(image)); }

GrayImage read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace attg
