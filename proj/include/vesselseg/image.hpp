#pragma once

#include <cstdint>
#include <vector>

#include "vesselseg/error.hpp"

namespace vesselseg {

/// 8-bit raster, interleaved, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    Image8() = default;
    Image8(int w, int h, int c)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, 0) {}

    std::uint8_t& at(int row, int col, int ch = 0) {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    std::uint8_t at(int row, int col, int ch = 0) const {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }

    bool same_size(const Image8& o) const { return width == o.width && height == o.height; }
};

}  // namespace vesselseg
