#pragma once

#include <filesystem>

#include "d3ssl/geometry.hpp"
#include "d3ssl/tensor.hpp"

namespace d3ssl::image {

// Images are 3-channel RGB tensors with values in [0,1].

// Bilinear resize (half-pixel centers).
Tensor resize(const Tensor& src, int out_w, int out_h);

// Integer-aligned crop followed by bilinear resize.
Tensor crop_resize(const Tensor& src, const geometry::BBox& crop, int out_w, int out_h);

// Exact 2x downsample: each output pixel is the mean of a 2x2 input block.
Tensor downsample2x(const Tensor& src);

// Pads or copies `src` onto a canvas; used when composing fixtures.
void paste(const Tensor& src, Tensor& dst, int x0, int y0);

Tensor load_png(const std::filesystem::path& path);
void save_png(const Tensor& img, const std::filesystem::path& path);

// Mask as a single-channel tensor (0/1) for visual output.
Tensor mask_to_image(const geometry::Mask& m);

} // namespace d3ssl::image
