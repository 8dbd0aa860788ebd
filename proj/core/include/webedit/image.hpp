#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace webedit {

/// 8-bit RGB raster, row-major, no padding.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Raster() = default;
  Raster(int w, int h, std::uint8_t fill = 0);

  std::uint8_t* at(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool operator==(const Raster&) const = default;
};

/// Deterministic lossless PNG encoding (fixed compression settings).
std::string encode_png(const Raster& image);
/// Decodes any PNG into RGB8; alpha is composited over white.
Raster decode_png(std::span<const std::uint8_t> bytes);
Raster decode_png(std::string_view bytes);

}  // namespace webedit
