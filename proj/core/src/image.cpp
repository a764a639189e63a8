#include "ppose/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace ppose {

Image::Image(int w, int h, Rgb fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw ValidationError("image: non-positive size");
    data.resize(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) set(x, y, fill);
}

void Image::set(int x, int y, const Rgb& rgb) {
    for (int c = 0; c < 3; ++c) at(x, y, c) = rgb[static_cast<std::size_t>(c)];
}

Image hflip_image(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    return out;
}

Image resize_nearest(const Image& img, int new_w, int new_h) {
    Image out(new_w, new_h);
    for (int y = 0; y < new_h; ++y) {
        const int sy = std::min(img.height - 1, static_cast<int>((y + 0.5) * img.height / new_h));
        for (int x = 0; x < new_w; ++x) {
            const int sx = std::min(img.width - 1, static_cast<int>((x + 0.5) * img.width / new_w));
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h, Rgb pad) {
    Image out(w, h, pad);
    for (int y = 0; y < h; ++y) {
        const int sy = y0 + y;
        if (sy < 0 || sy >= img.height) continue;
        for (int x = 0; x < w; ++x) {
            const int sx = x0 + x;
            if (sx < 0 || sx >= img.width) continue;
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

namespace {

double dist2_to_segment(double px, double py, double x0, double y0, double x1, double y1) {
    const double vx = x1 - x0, vy = y1 - y0;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - x0) * vx + (py - y0) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (x0 + t * vx), dy = py - (y0 + t * vy);
    return dx * dx + dy * dy;
}

}  // namespace

void fill_capsule(Image& img, double x0, double y0, double x1, double y1, double radius,
                  const Rgb& color, std::vector<int>* owner, int owner_id) {
    const int minx = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - radius)));
    const int maxx = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(x0, x1) + radius)));
    const int miny = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - radius)));
    const int maxy = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(y0, y1) + radius)));
    const double r2 = radius * radius;
    for (int y = miny; y <= maxy; ++y)
        for (int x = minx; x <= maxx; ++x)
            if (dist2_to_segment(x + 0.5, y + 0.5, x0, y0, x1, y1) <= r2) {
                img.set(x, y, color);
                if (owner) (*owner)[static_cast<std::size_t>(y) * img.width + x] = owner_id;
            }
}

void fill_circle(Image& img, double cx, double cy, double radius, const Rgb& color,
                 std::vector<int>* owner, int owner_id) {
    fill_capsule(img, cx, cy, cx, cy, radius, color, owner, owner_id);
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, const Rgb& color) {
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        if (img.contains(x, y)) img.set(x, y, color);
    }
}

void draw_rect(Image& img, double x0, double y0, double x1, double y1, const Rgb& color) {
    draw_line(img, x0, y0, x1, y0, color);
    draw_line(img, x1, y0, x1, y1, color);
    draw_line(img, x1, y1, x0, y1, color);
    draw_line(img, x0, y1, x0, y0, color);
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("write_ppm: cannot open " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw Error("write_ppm: write failed for " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("read_ppm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw LoadError("read_ppm: not a P6 file: " + path);
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255) throw LoadError("read_ppm: bad header: " + path);
    f.get();  // single whitespace after header
    Image img(w, h);
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
        throw LoadError("read_ppm: truncated pixel data: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0;
    return img;
}

}  // namespace ppose
