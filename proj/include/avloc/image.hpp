#pragma once

#include <string>
#include <vector>

#include "avloc/common.hpp"

namespace avloc {

// Interleaved RGB image, values in [0, 1].
struct Image {
    int h = 0, w = 0;
    std::vector<double> rgb; // h * w * 3

    Image() = default;
    Image(int h_, int w_, double fill = 0.0) : h(h_), w(w_), rgb(static_cast<std::size_t>(h_) * w_ * 3, fill) {}

    double& at(int y, int x, int ch) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch]; }
    double at(int y, int x, int ch) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch]; }

    void set_pixel(int y, int x, double r, double g, double b) {
        at(y, x, 0) = r;
        at(y, x, 1) = g;
        at(y, x, 2) = b;
    }
};

// Bilinear resize, pixel-center convention (src = (dst + 0.5) * scale - 0.5).
Image resize_bilinear(const Image& src, int out_h, int out_w);

// Exact 2x2 box-filter downscale; requires even dimensions.
Image downscale_half(const Image& src);

Image center_crop(const Image& src, int out_h, int out_w);

// 8-bit RGB PNG I/O. Quantization on save is round(clamp(v) * 255).
void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path);

} // namespace avloc
