#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "tumorsearch/core/error.hpp"

namespace tumorsearch::viz {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGray{160, 160, 160};

/// Distinct line colors, cycled.
inline Rgb palette(std::size_t i) {
    static constexpr std::array<Rgb, 8> colors{{{31, 119, 180},
                                               {255, 127, 14},
                                               {44, 160, 44},
                                               {214, 39, 40},
                                               {148, 103, 189},
                                               {140, 86, 75},
                                               {227, 119, 194},
                                               {23, 190, 207}}};
    return colors[i % colors.size()];
}

/// Piecewise-linear approximation of the viridis map, t in [0, 1].
inline Rgb colormap(double t) {
    static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (stops.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
    const double f = t - static_cast<double>(i);
    Rgb out{};
    for (std::size_t c = 0; c < 3; ++c) {
        out[c] = static_cast<std::uint8_t>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
    }
    return out;
}

/// RGB raster with a few drawing primitives.
class Canvas {
public:
    Canvas(int width, int height, Rgb background = kWhite)
        : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
        if (width < 1 || height < 1) throw Error("canvas size must be positive");
        fill(background);
    }

    int width() const { return width_; }
    int height() const { return height_; }

    void fill(Rgb c) {
        for (std::size_t i = 0; i < pixels_.size(); i += 3) std::copy(c.begin(), c.end(), pixels_.begin() + i);
    }

    void set(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
        std::copy(c.begin(), c.end(), pixels_.begin() + (static_cast<std::size_t>(y) * width_ + x) * 3);
    }

    Rgb get(int x, int y) const {
        const auto* p = pixels_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
        return {p[0], p[1], p[2]};
    }

    void line(int x0, int y0, int x1, int y1, Rgb c) {
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void rect(int x0, int y0, int x1, int y1, Rgb c) {
        line(x0, y0, x1, y0, c);
        line(x1, y0, x1, y1, c);
        line(x1, y1, x0, y1, c);
        line(x0, y1, x0, y0, c);
    }

    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
            for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
        }
    }

    /// Marker 0 = disc, 1 = square, 2 = triangle, 3+ = cross.
    void marker(int cx, int cy, int kind, int r, Rgb c) {
        for (int y = -r; y <= r; ++y) {
            for (int x = -r; x <= r; ++x) {
                bool on = false;
                switch (kind) {
                    case 0: on = x * x + y * y <= r * r; break;
                    case 1: on = true; break;
                    case 2: on = y >= -r && 2 * std::abs(x) <= y + r; break;
                    default: on = x == y || x == -y; break;
                }
                if (on) set(cx + x, cy + y, c);
            }
        }
    }

    void save_png(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        png_image image{};
        image.version = PNG_IMAGE_VERSION;
        image.width = static_cast<png_uint_32>(width_);
        image.height = static_cast<png_uint_32>(height_);
        image.format = PNG_FORMAT_RGB;
        if (!png_image_write_to_file(&image, path.c_str(), 0, pixels_.data(), 0, nullptr)) {
            throw IoError("cannot write PNG '" + path.string() + "': " + image.message);
        }
    }

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> pixels_;
};

}  // namespace tumorsearch::viz
