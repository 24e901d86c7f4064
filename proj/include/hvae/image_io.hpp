#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hvae/tensor.hpp"

namespace hvae::io {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Rgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  bool operator==(const Rgb8&) const = default;
};

/// round(255 (x + 1) / 2), clamped to [0, 255]; NaN maps to 0.
std::uint8_t quantize(float x);
/// Inverse of quantize up to rounding.
float dequantize(std::uint8_t v);

/// Binary PPM, "P6\n<w> <h>\n255\n" followed by the pixels.
std::string encode_ppm(const Rgb8& img);
Rgb8 decode_ppm(std::string_view bytes);
void write_ppm(const std::string& path, const Rgb8& img);
Rgb8 read_ppm(const std::string& path);

/// Tiles sequences [N, T, C, H, W] (C = 1 or 3) in [-1, 1]: row i is
/// sequence i, column t is frame t. Single-channel frames become grey.
Rgb8 make_grid(const nn::Tensor<float>& sequences);
void export_grid(const nn::Tensor<float>& sequences, const std::string& path);

}  // namespace hvae::io
