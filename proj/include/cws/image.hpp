#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cws {

// 8-bit RGB image, interleaved R,G,B.
struct ImageU8 {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;  // H*W*3

    ImageU8() = default;
    ImageU8(int h, int w, uint8_t fill = 0) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {
        if (h < 1 || w < 1) throw std::invalid_argument("ImageU8: empty image");
    }
    uint8_t& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    int64_t pixels() const { return static_cast<int64_t>(height) * width; }
};

// Single floating plane with values in [0,255].
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // H*W

    Plane() = default;
    Plane(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}
    double& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
    int64_t size() const { return static_cast<int64_t>(height) * width; }
    bool same_size(const Plane& o) const { return height == o.height && width == o.width; }
};

// Binary mask, values restricted to {0,1}.
struct MaskBin {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;  // H*W

    MaskBin() = default;
    MaskBin(int h, int w, uint8_t fill = 0) : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}
    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
    int64_t size() const { return static_cast<int64_t>(height) * width; }
    int64_t positive_count() const {
        int64_t n = 0;
        for (uint8_t v : data) n += v;
        return n;
    }
    bool empty_mask() const { return positive_count() == 0; }
    bool same_size(const MaskBin& o) const { return height == o.height && width == o.width; }
};

}  // namespace cws
