// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace exsup {

// 8-bit interleaved pixels, 1 (gray) or 3 (rgb) channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Decodes any libpng-readable file: palette and 16-bit inputs are expanded
// or narrowed to 8 bits, alpha is dropped. Throws std::runtime_error naming
// the file on any failure.
ImageU8 read_png(const std::filesystem::path& path);

// Fixed compression settings so identical pixels produce identical bytes.
void write_png_gray(const std::filesystem::path& path, int width, int height,
                    const std::uint8_t* pixels);
void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::uint8_t* pixels);

}  // namespace exsup
