// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "flowsr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>

namespace flowsr {

void clamp01(ImageBuffer& img) {
    for (auto& v : img.v) v = std::clamp(v, 0.0, 1.0);
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_byte(double v) {
    const double x = std::clamp(v, 0.0, 1.0) * 255.0 + 0.5;
    return static_cast<uint8_t>(x);
}

}  // namespace

void write_png(const std::string& path, const ImageBuffer& img) {
    FLOWSR_REQUIRE(img.n == 1 && img.c == 3, "write_png: expected a single RGB image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw_runtime("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw_runtime("write_png: libpng failure for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) row[3 * x + ch] = to_byte(img.at(0, ch, y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageBuffer read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw_runtime("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw_runtime("read_png: libpng failure for " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    FLOWSR_REQUIRE(png_get_channels(png, info) == 3, "read_png: expected RGB after expansion");

    ImageBuffer img(1, 3, h, w);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) img.at(0, ch, y, x) = row[3 * x + ch] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

ImageBuffer hstack(const std::vector<ImageBuffer>& imgs) {
    FLOWSR_REQUIRE(!imgs.empty(), "hstack: empty input");
    int total_w = 0;
    for (const auto& im : imgs) {
        FLOWSR_REQUIRE(im.h == imgs[0].h && im.c == 3, "hstack: mismatched heights");
        total_w += im.w;
    }
    ImageBuffer out(1, 3, imgs[0].h, total_w);
    int xoff = 0;
    for (const auto& im : imgs) {
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < im.h; ++y)
                for (int x = 0; x < im.w; ++x) out.at(0, ch, y, xoff + x) = im.at(0, ch, y, x);
        xoff += im.w;
    }
    return out;
}

ImageBuffer vstack(const std::vector<ImageBuffer>& imgs) {
    FLOWSR_REQUIRE(!imgs.empty(), "vstack: empty input");
    int total_h = 0;
    for (const auto& im : imgs) {
        FLOWSR_REQUIRE(im.w == imgs[0].w && im.c == 3, "vstack: mismatched widths");
        total_h += im.h;
    }
    ImageBuffer out(1, 3, total_h, imgs[0].w);
    int yoff = 0;
    for (const auto& im : imgs) {
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < im.h; ++y)
                for (int x = 0; x < im.w; ++x) out.at(0, ch, yoff + y, x) = im.at(0, ch, y, x);
        yoff += im.h;
    }
    return out;
}

}  // namespace flowsr
