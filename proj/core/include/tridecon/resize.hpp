#pragma once

#include "tridecon/image.hpp"

namespace tridecon {

/// Bilinear resampling with half-pixel centers, edge-clamped, no anti-aliasing.
Image2D resize_bilinear(const Image2D& img, int width, int height);

/// Bicubic resampling (Keys kernel, a = -0.75) with half-pixel centers and
/// replicated borders, no anti-aliasing; the OpenCV INTER_CUBIC convention.
Image2D resize_bicubic(const Image2D& img, int width, int height);

/// As above with explicit source pixels per destination pixel along x and y,
/// as when resizing by a factor rather than to a size.
Image2D resize_bicubic(const Image2D& img, int width, int height, double scale_x, double scale_y);

}  // namespace tridecon
