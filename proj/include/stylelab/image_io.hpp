#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylelab/tensor.hpp"

namespace stylelab {

/// 8-bit RGB raster, rows top to bottom.
struct RgbImage {
  int64_t h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // h * w * 3

  RgbImage() = default;
  RgbImage(int64_t h_, int64_t w_)
      : h(h_), w(w_), pixels(static_cast<std::size_t>(h_ * w_ * 3), 0) {}
  std::uint8_t* at(int64_t y, int64_t x) {
    return pixels.data() + static_cast<std::size_t>((y * w + x) * 3);
  }
  const std::uint8_t* at(int64_t y, int64_t x) const {
    return pixels.data() + static_cast<std::size_t>((y * w + x) * 3);
  }
};

/// 3xHxW float image in [0,1] -> bytes (values clamped).
RgbImage to_rgb(const Tensor& image);

/// HxW class-id map -> fixed 4-color palette.
RgbImage labels_to_rgb(const Tensor& labels);

/// Tiles cells into a grid with `pad` white pixels between them. Rows may
/// have different lengths; every cell must share the same size.
RgbImage tile_grid(const std::vector<std::vector<RgbImage>>& rows,
                   int64_t pad = 2);

/// Truecolor 8-bit PNG via zlib.
void write_png(const std::string& path, const RgbImage& img);

}  // namespace stylelab
