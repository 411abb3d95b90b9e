#pragma once

#include <string>

#include "ccdnet/core/tensor.hpp"

namespace ccdnet {

/// Grayscale PNG (8- or 16-bit) to float image in [0,1], shape (H,W).
Tensor<float> read_png_gray(const std::string& path);

/// Float image in [0,1] to 16-bit grayscale PNG.
void write_png_gray16(const std::string& path, const Tensor<float>& image);

/// Float image in [0,1] to 8-bit grayscale PNG.
void write_png_gray8(const std::string& path, const Tensor<float>& image);

/// Interleaved RGB bytes, shape (H, W, 3), to 8-bit color PNG.
void write_png_rgb8(const std::string& path, const Tensor<float>& rgb);

}  // namespace ccdnet
