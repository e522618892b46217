// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/image_io.hpp"

#include "pixdec/errors.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

namespace pixdec {

namespace {

struct FileCloser {
    void operator()(FILE* f) const
    {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_rgb8(const std::filesystem::path& path, const std::vector<uint8_t>& rgb, int64_t width, int64_t height)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp)
            throw std::runtime_error("cannot open " + tmp.string());
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("libpng initialisation failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("libpng write failed for " + path.string());
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int64_t y = 0; y < height; ++y)
            png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

} // namespace

void write_png(const std::filesystem::path& path, const torch::Tensor& image)
{
    if (image.dim() != 3 || image.size(0) != 3)
        throw ShapeError("write_png: expected [3,H,W]");
    auto u8 = ((image.detach().to(torch::kDouble).clamp(-1.0, 1.0) + 1.0) * 127.5)
                  .round()
                  .to(torch::kByte)
                  .permute({1, 2, 0})
                  .contiguous();
    std::vector<uint8_t> rgb(u8.data_ptr<uint8_t>(), u8.data_ptr<uint8_t>() + u8.numel());
    write_rgb8(path, rgb, image.size(2), image.size(1));
}

torch::Tensor read_png(const std::filesystem::path& path)
{
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp)
        throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng read failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const auto w = static_cast<int64_t>(png_get_image_width(png, info));
    const auto h = static_cast<int64_t>(png_get_image_height(png, info));
    auto out = torch::empty({h, w, 3}, torch::kByte);
    for (int64_t y = 0; y < h; ++y)
        png_read_row(png, out.data_ptr<uint8_t>() + y * w * 3, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out.permute({2, 0, 1}).to(torch::kFloat) / 127.5 - 1.0;
}

torch::Tensor tile_row(const torch::Tensor& batch)
{
    if (batch.dim() != 4)
        throw ShapeError("tile_row: expected [B,3,H,W]");
    return torch::cat(batch.unbind(0), 2);
}

void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series, int64_t width,
                     int64_t height)
{
    constexpr std::array<std::array<uint8_t, 3>, 6> palette = {
        {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207}}};
    std::vector<uint8_t> rgb(static_cast<size_t>(width * height * 3), 255);
    auto set = [&](int64_t x, int64_t y, const std::array<uint8_t, 3>& c) {
        if (x < 0 || y < 0 || x >= width || y >= height)
            return;
        std::copy(c.begin(), c.end(), rgb.begin() + (y * width + x) * 3);
    };
    auto line = [&](int64_t x0, int64_t y0, int64_t x1, int64_t y1, const std::array<uint8_t, 3>& c) {
        const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int64_t err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1)
                break;
            const int64_t e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    };

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series)
        for (size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
                continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin)) {
        xmin = ymin = 0.0;
        xmax = ymax = 1.0;
    }
    if (xmax == xmin)
        xmax = xmin + 1.0;
    if (ymax == ymin)
        ymax = ymin + 1.0;

    const int64_t m = 24;
    const std::array<uint8_t, 3> axis = {0, 0, 0};
    line(m, height - m, width - m, height - m, axis);
    line(m, m, m, height - m, axis);
    auto px = [&](double x) { return m + static_cast<int64_t>(std::lround((x - xmin) / (xmax - xmin) * (width - 2 * m))); };
    auto py = [&](double y) {
        return height - m - static_cast<int64_t>(std::lround((y - ymin) / (ymax - ymin) * (height - 2 * m)));
    };
    for (size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const auto& c = palette[k % palette.size()];
        bool have_prev = false;
        int64_t prev_x = 0, prev_y = 0;
        for (size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                have_prev = false;
                continue;
            }
            const auto x = px(s.x[i]), y = py(s.y[i]);
            if (have_prev)
                line(prev_x, prev_y, x, y, c);
            for (int64_t d = -1; d <= 1; ++d) {
                set(x + d, y, c);
                set(x, y + d, c);
            }
            prev_x = x;
            prev_y = y;
            have_prev = true;
        }
    }
    write_rgb8(path, rgb, width, height);
}

} // namespace pixdec
