#include "avloc/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <png.h>

namespace avloc {

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (src.h <= 0 || src.w <= 0) throw ShapeError("resize_bilinear: empty source");
    Image out(out_h, out_w);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const double top = src.at(y0, x0, ch) * (1.0 - wx) + src.at(y0, x1, ch) * wx;
                const double bot = src.at(y1, x0, ch) * (1.0 - wx) + src.at(y1, x1, ch) * wx;
                out.at(y, x, ch) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Image downscale_half(const Image& src) {
    if (src.h % 2 != 0 || src.w % 2 != 0) throw ShapeError("downscale_half: dimensions must be even");
    Image out(src.h / 2, src.w / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                out.at(y, x, ch) = 0.25 * (src.at(2 * y, 2 * x, ch) + src.at(2 * y, 2 * x + 1, ch) +
                                           src.at(2 * y + 1, 2 * x, ch) + src.at(2 * y + 1, 2 * x + 1, ch));
    return out;
}

Image center_crop(const Image& src, int out_h, int out_w) {
    if (out_h > src.h || out_w > src.w) throw ShapeError("center_crop: crop larger than source");
    const int y0 = (src.h - out_h) / 2;
    const int x0 = (src.w - out_w) / 2;
    Image out(out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = src.at(y0 + y, x0 + x, ch);
    return out;
}

void save_png(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("save_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("save_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(img.at(y, x, ch), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * 3 + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("load_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("load_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    Image img(h, w);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) = row[static_cast<std::size_t>(x) * 3 + ch] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

} // namespace avloc
