#pragma once

#include "tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace arbsr {

// 8-bit grayscale PNG of `img`, values mapped linearly from [lo, hi] and clamped.
std::vector<std::uint8_t> encode_png_gray(Grid<double> const &img, double lo = 0.0, double hi = 1.0);
// Interleaved 8-bit RGB, h * w * 3 bytes.
std::vector<std::uint8_t> encode_png_rgb(int h, int w, std::vector<std::uint8_t> const &rgb);
// Decodes any PNG to 8-bit gray scaled to [0, 1].
Grid<double> decode_png_gray(std::vector<std::uint8_t> const &bytes);
Grid<double> decode_png_gray(std::filesystem::path const &file);

void write_bytes(std::filesystem::path const &file, std::vector<std::uint8_t> const &bytes);

} // namespace arbsr
