#include "avloc/visualize.hpp"

#include <algorithm>
#include <cmath>

#include "avloc/metrics.hpp"

namespace avloc::viz {

Rgba heat_color(double u) {
    if (u <= 0.0) return {0, 0, 0, 0};
    u = std::min(u, 1.0);
    Rgba c;
    c.a = 1.0;
    if (u < 1.0 / 3.0) {
        const double t = u * 3.0;
        c = {0.0, t, 1.0, 1.0}; // blue -> cyan
    } else if (u < 2.0 / 3.0) {
        const double t = (u - 1.0 / 3.0) * 3.0;
        c = {t, 1.0, 1.0 - t, 1.0}; // cyan -> yellow
    } else {
        const double t = (u - 2.0 / 3.0) * 3.0;
        c = {1.0, 1.0 - t, 0.0, 1.0}; // yellow -> red
    }
    return c;
}

Image overlay_map(const Image& frame, const Grid& map, double norm_max, const std::vector<Box>& boxes,
                  double alpha) {
    const Grid up = (map.h == frame.h && map.w == frame.w)
                        ? map
                        : metrics::upsample_bilinear(map, frame.h, frame.w);
    Image out = frame;
    for (int y = 0; y < frame.h; ++y)
        for (int x = 0; x < frame.w; ++x) {
            const double u = norm_max > 0.0 ? up.at(y, x) / norm_max : 0.0;
            const Rgba c = heat_color(u);
            const double w = alpha * c.a;
            out.at(y, x, 0) = (1.0 - w) * frame.at(y, x, 0) + w * c.r;
            out.at(y, x, 1) = (1.0 - w) * frame.at(y, x, 1) + w * c.g;
            out.at(y, x, 2) = (1.0 - w) * frame.at(y, x, 2) + w * c.b;
        }
    for (const auto& b : boxes) {
        if (b.sounding)
            draw_box_outline(out, b, 0.0, 0.9, 0.0);
        else
            draw_box_outline(out, b, 0.9, 0.0, 0.0);
    }
    return out;
}

void draw_box_outline(Image& img, const Box& box, double r, double g, double b, int thickness) {
    const int x0 = std::max(0, box.x), y0 = std::max(0, box.y);
    const int x1 = std::min(img.w, box.x + box.w), y1 = std::min(img.h, box.y + box.h);
    for (int t = 0; t < thickness; ++t) {
        for (int x = x0; x < x1; ++x) {
            if (y0 + t < img.h) img.set_pixel(y0 + t, x, r, g, b);
            if (y1 - 1 - t >= 0) img.set_pixel(y1 - 1 - t, x, r, g, b);
        }
        for (int y = y0; y < y1; ++y) {
            if (x0 + t < img.w) img.set_pixel(y, x0 + t, r, g, b);
            if (x1 - 1 - t >= 0) img.set_pixel(y, x1 - 1 - t, r, g, b);
        }
    }
}

Image compose_tiles(const std::vector<Image>& tiles) {
    if (tiles.empty()) throw ShapeError("compose_tiles: no tiles");
    const int th = tiles[0].h, tw = tiles[0].w;
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(tiles.size()))));
    const int rows = static_cast<int>(std::ceil(static_cast<double>(tiles.size()) / cols));
    Image out(rows * th, cols * tw);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int oy = static_cast<int>(i) / cols * th;
        const int ox = static_cast<int>(i) % cols * tw;
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                for (int c = 0; c < 3; ++c) out.at(oy + y, ox + x, c) = tiles[i].at(y, x, c);
    }
    return out;
}

} // namespace avloc::viz
