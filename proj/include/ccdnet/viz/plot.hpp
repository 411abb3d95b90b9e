#pragma once

#include <string>

#include "ccdnet/core/tensor.hpp"
#include "ccdnet/data/annotation.hpp"

namespace ccdnet {

/// Normalize any real-valued map to [0,1] over its own range.
Tensor<float> normalize01(const Tensor<float>& map);

/// (H,W) values in [0,1] -> (H,W,3) RGB via a dark-to-hot color ramp.
Tensor<float> colormap_rgb(const Tensor<float>& gray01);

/// (H,W) grayscale in [0,1] -> (H,W,3).
Tensor<float> gray_to_rgb(const Tensor<float>& gray);

/// One-pixel rectangle outline.
void draw_box(Tensor<float>& rgb, const BoxF& box, float r, float g, float b);

/// Nearest-neighbor upscale of an RGB canvas.
Tensor<float> upscale_rgb(const Tensor<float>& rgb, int factor);

/// Side-by-side 3-d surface plots of two equally sized value grids
/// (painter's algorithm, isometric projection, height-colored quads).
Tensor<float> render_surface_pair(const Tensor<float>& left, const Tensor<float>& right);

}  // namespace ccdnet
