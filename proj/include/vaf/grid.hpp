#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "vaf/error.hpp"

namespace vaf {

/// Row-major H x W x C buffer.
template <typename T>
struct Grid {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<T> data;

    Grid() = default;
    Grid(int w, int h, int c = 1, T fill = T{})
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    bool empty() const { return data.empty(); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    std::span<T> pixel(int x, int y) { return {data.data() + index(x, y), static_cast<std::size_t>(channels)}; }
    std::span<const T> pixel(int x, int y) const {
        return {data.data() + index(x, y), static_cast<std::size_t>(channels)};
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Image = Grid<double>;
using LabelMap = Grid<int>;

/// Bilinear sample of all channels at a fractional pixel coordinate (pixel
/// centers sit on integer coordinates). Coordinates are clamped to the grid.
inline std::vector<double> bilinear(const Image& img, double x, double y) {
    if (img.empty()) throw ArgumentError("bilinear sample of an empty grid");
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ax = x - x0;
    const double ay = y - y0;
    std::vector<double> out(static_cast<std::size_t>(img.channels), 0.0);
    for (int c = 0; c < img.channels; ++c) {
        const double top = (1 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
        const double bottom = (1 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
        out[static_cast<std::size_t>(c)] = (1 - ay) * top + ay * bottom;
    }
    return out;
}

} // namespace vaf
