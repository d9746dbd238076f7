#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/geometry.hpp"

namespace rcv {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // row-major, 3 bytes per pixel

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

    bool empty() const noexcept { return width <= 0 || height <= 0; }

    Rgb at(int u, int v) const {
        const auto i = (static_cast<std::size_t>(v) * width + u) * 3;
        return {data[i], data[i + 1], data[i + 2]};
    }

    void set(int u, int v, Rgb c) {
        const auto i = (static_cast<std::size_t>(v) * width + u) * 3;
        data[i] = c.r;
        data[i + 1] = c.g;
        data[i + 2] = c.b;
    }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Per-pixel instance ids aligned with a raster; 0 is background.
struct InstancePixelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> ids;
    std::map<std::uint32_t, std::string> classes;

    InstancePixelMap() = default;
    InstancePixelMap(int w, int h) : width(w), height(h), ids(static_cast<std::size_t>(w) * h, 0) {}

    std::uint32_t at(int u, int v) const { return ids[static_cast<std::size_t>(v) * width + u]; }
    void set(int u, int v, std::uint32_t id) { ids[static_cast<std::size_t>(v) * width + u] = id; }

    friend bool operator==(const InstancePixelMap&, const InstancePixelMap&) = default;
};

/// Half-open pixel rectangle [u0,u1) x [v0,v1).
struct PixelRect {
    double u0 = 0.0;
    double v0 = 0.0;
    double u1 = 0.0;
    double v1 = 0.0;

    bool valid() const { return std::isfinite(u0) && std::isfinite(v0) && std::isfinite(u1) && std::isfinite(v1) && u0 < u1 && v0 < v1; }
    bool contains(double u, double v) const { return u >= u0 && u < u1 && v >= v0 && v < v1; }

    /// Snap to the pixel grid: floor the lower corner, ceil the upper one.
    PixelRect snapped() const { return {std::floor(u0), std::floor(v0), std::ceil(u1), std::ceil(v1)}; }

    PixelRect clamped(int width, int height) const {
        auto clamp = [](double x, double hi) { return std::min(std::max(x, 0.0), hi); };
        return {clamp(u0, width), clamp(v0, height), clamp(u1, width), clamp(v1, height)};
    }

    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct Detection2D {
    std::string class_label;
    double score = 1.0;
    PixelRect rect;

    friend bool operator==(const Detection2D&, const Detection2D&) = default;
};

}  // namespace rcv
