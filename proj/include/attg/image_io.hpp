#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "attg/binary_io.hpp"
#include "attg/patching.hpp"

namespace attg {

// Binary PPM (P6, maxval 255). Pixel values are quantized to round(255 v).
Bytes encode_ppm(const Image& image);
Image decode_ppm(const Bytes& bytes);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// Binary PGM (P5, maxval 255) for single-channel 8-bit rasters.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};
Bytes encode_pgm(const GrayImage& image);
GrayImage decode_pgm(const Bytes& bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

std::uint8_t quantize_unit(double v);

}  // namespace attg
