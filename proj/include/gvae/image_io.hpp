#pragma once

#include <string>
#include <vector>

#include "gvae/tensor.hpp"

namespace gvae {

// 8-bit grayscale PNG.
void write_png_gray(const std::string& path, const unsigned char* data, long h, long w);

// Tiles [H,W] images (values clipped to [0,1]) into a grid with 1-px
// separators and writes a PNG.
void write_image_grid(const std::string& path, const std::vector<Tensor>& tiles, long cols);

// Normalizes a tile to [0,1] by min/max (for signed basis images).
Tensor normalize_for_display(const Tensor& t);

// Simple line plot (x ascending) with a dashed y=0.5 reference line.
void write_line_plot(const std::string& path, const std::vector<double>& xs,
                     const std::vector<double>& ys, double y_lo, double y_hi);

}  // namespace gvae
