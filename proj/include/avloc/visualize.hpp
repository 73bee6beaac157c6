#pragma once

#include <vector>

#include "avloc/av_types.hpp"
#include "avloc/image.hpp"
#include "avloc/tensor.hpp"

namespace avloc::viz {

struct Rgba {
    double r = 0, g = 0, b = 0, a = 0;
};

// Heat colormap for u in (0, 1]: blue -> cyan -> yellow -> red. Values at or
// below zero are fully transparent, so an all-zero map leaves the frame
// untouched.
Rgba heat_color(double u);

// out = (1 - alpha * a(u)) * frame + alpha * a(u) * color(u), where
// u = map / norm_max (map upsampled to the frame size). Box outlines are
// drawn afterwards: green for sounding, red for silent.
Image overlay_map(const Image& frame, const Grid& map, double norm_max, const std::vector<Box>& boxes,
                  double alpha = 0.5);

void draw_box_outline(Image& img, const Box& box, double r, double g, double b, int thickness = 2);

// Tiles images into a near-square grid (padding empty tiles with black).
Image compose_tiles(const std::vector<Image>& tiles);

} // namespace avloc::viz
