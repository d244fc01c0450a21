#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "graphseg/common.hpp"

namespace graphseg {

constexpr int kMinImageSide = 32;

// Interleaved 8-bit RGB image, origin top-left, x = column, y = row.
// That coordinate convention holds everywhere in this codebase.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // size = width * height * 3

    Image() = default;
    Image(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0})
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3) {
        for (std::size_t i = 0; i < data.size(); i += 3) {
            data[i] = fill[0];
            data[i + 1] = fill[1];
            data[i + 2] = fill[2];
        }
    }

    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }

    std::array<std::uint8_t, 3> rgb(int x, int y) const {
        const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
        return {data[o], data[o + 1], data[o + 2]};
    }

    void set_rgb(int x, int y, std::array<std::uint8_t, 3> c) {
        const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
        data[o] = c[0];
        data[o + 1] = c[1];
        data[o + 2] = c[2];
    }

    double gray(int x, int y) const {
        const auto c = rgb(x, y);
        return (static_cast<double>(c[0]) + c[1] + c[2]) / 3.0;
    }

    bool operator==(const Image& o) const = default;
};

inline void require_valid_image(const Image& img) {
    if (img.width < kMinImageSide || img.height < kMinImageSide)
        throw InvalidInputError("image must be at least " + std::to_string(kMinImageSide) +
                                "x" + std::to_string(kMinImageSide) + ", got " +
                                std::to_string(img.width) + "x" + std::to_string(img.height));
    if (img.data.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw InvalidInputError("image buffer size does not match dimensions");
}

// Single-channel 8-bit label image (class ids) or binary mask (0/1).
struct LabelMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // size = width * height

    LabelMask() = default;
    LabelMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const {
        return data[static_cast<std::size_t>(y) * width + x];
    }
    void set(int x, int y, std::uint8_t v) {
        data[static_cast<std::size_t>(y) * width + x] = v;
    }
    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }
    std::size_t count_nonzero() const {
        std::size_t n = 0;
        for (auto v : data) n += (v != 0);
        return n;
    }

    bool operator==(const LabelMask& o) const = default;
};

using BinaryMask = LabelMask;  // values restricted to {0, 1}

// Per-pixel unnormalized scores from a text-conditioned backend.
struct LogitMap {
    int width = 0;
    int height = 0;
    std::vector<float> values;  // size = width * height
    std::string prompt;

    LogitMap() = default;
    LogitMap(int w, int h, std::string p)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.f), prompt(std::move(p)) {}

    float at(int x, int y) const {
        return values[static_cast<std::size_t>(y) * width + x];
    }
    void set(int x, int y, float v) {
        values[static_cast<std::size_t>(y) * width + x] = v;
    }
};

inline double color_distance(std::array<std::uint8_t, 3> a, std::array<std::uint8_t, 3> b) {
    const double dr = static_cast<double>(a[0]) - b[0];
    const double dg = static_cast<double>(a[1]) - b[1];
    const double db = static_cast<double>(a[2]) - b[2];
    return std::sqrt(dr * dr + dg * dg + db * db);
}

}  // namespace graphseg
