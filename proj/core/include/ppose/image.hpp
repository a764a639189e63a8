#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ppose/error.hpp"

namespace ppose {

using Rgb = std::array<double, 3>;

// Row-major RGB raster, channel values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;  // (y * width + x) * 3 + c

    Image() = default;
    Image(int w, int h, Rgb fill = {0.0, 0.0, 0.0});

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    void set(int x, int y, const Rgb& rgb);
    bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

Image hflip_image(const Image& img);

// Nearest-neighbor resize (prompt crops are tiny; filtering is not needed).
Image resize_nearest(const Image& img, int new_w, int new_h);

// Crop [x0, x0+w) x [y0, y0+h); out-of-bounds pixels read as `pad`.
Image crop(const Image& img, int x0, int y0, int w, int h, Rgb pad = {0, 0, 0});

// Drawing helpers used by the synthetic generator and the overlay writer.
// Coordinates are in pixels; shapes are clipped to the raster.
void fill_capsule(Image& img, double x0, double y0, double x1, double y1, double radius,
                  const Rgb& color, std::vector<int>* owner = nullptr, int owner_id = 0);
void fill_circle(Image& img, double cx, double cy, double radius, const Rgb& color,
                 std::vector<int>* owner = nullptr, int owner_id = 0);
void draw_line(Image& img, double x0, double y0, double x1, double y1, const Rgb& color);
void draw_rect(Image& img, double x0, double y0, double x1, double y1, const Rgb& color);

// Binary PPM (P6, maxval 255). Deterministic byte-for-byte.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

}  // namespace ppose
