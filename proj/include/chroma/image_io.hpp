#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "chroma/color_math.hpp"

namespace chroma {

/// 8-bit RGB PNG. Grey, palette and alpha inputs are expanded / stripped on load.
RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

/// Separable triangle-filter resampling; the filter widens when downscaling.
RgbImage resize(const RgbImage& img, int height, int width);
GrayImage resize(const GrayImage& img, int height, int width);

/// Rounds every component to the nearest 8-bit level.
RgbImage quantize8(const RgbImage& img);

}  // namespace chroma
