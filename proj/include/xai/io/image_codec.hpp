#pragma once

#include "xai/core/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace xai::io {

/// Interleaved 8-bit image, row-major, 1 (gray), 3 (RGB) or 4 (RGBA) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// (H, W, C) tensor with values in [0, 1] -> 8-bit image (clamped, rounded).
Image8 to_image8(const Tensor& image);

std::string encode_png(const Image8& image);

/// Baseline grayscale JPEG with fixed encoder settings (islow DCT, optimized
/// Huffman tables, no JFIF/APP markers) so output bytes are reproducible.
std::string encode_jpeg_gray(const Image8& image, int quality);

}  // namespace xai::io
