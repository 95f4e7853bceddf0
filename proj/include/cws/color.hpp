#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cws/image.hpp"
#include "cws/tensor.hpp"

namespace cws {

// Luminance plane of the YCrCb conversion, BT.601 full-range coefficients.
// Only the Y plane is consumed downstream, so the ordering of the chroma
// planes never matters here.
inline Plane rgb_to_ycrcb_y(const ImageU8& img) {
    Plane y(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            y.at(r, c) = 0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
    return y;
}

namespace detail {

inline double srgb_to_linear(double v8) {
    double v = v8 / 255.0;
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
    constexpr double delta3 = (6.0 / 29) * (6.0 / 29) * (6.0 / 29);
    return t > delta3 ? std::cbrt(t) : t / (3.0 * (6.0 / 29) * (6.0 / 29)) + 4.0 / 29;
}

}  // namespace detail

// A* chromaticity plane of CIELAB (D65 white point, sRGB primaries),
// offset-encoded into [0,255] with neutral grey at 128.
inline Plane rgb_to_lab_a(const ImageU8& img) {
    constexpr double xn = 0.95047, yn = 1.0;
    Plane a(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double rl = detail::srgb_to_linear(img.at(r, c, 0));
            double gl = detail::srgb_to_linear(img.at(r, c, 1));
            double bl = detail::srgb_to_linear(img.at(r, c, 2));
            double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
            double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
            double astar = 500.0 * (detail::lab_f(x / xn) - detail::lab_f(y / yn));
            a.at(r, c) = std::clamp(astar + 128.0, 0.0, 255.0);
        }
    return a;
}

struct EyConfig {
    int exponent = 5;
    bool swap_rb = false;

    void validate() const {
        if (exponent < 1) throw std::invalid_argument("EyConfig: exponent must be >= 1");
    }
};

// Exaggerated luminance: BT.709 weighted luminance (R and B coefficients
// exchanged when swap_rb is set), normalised to [0,255], raised to the
// configured exponent and rescaled so the brightest pixel maps back to 255.
// An all-black image yields an all-zero plane.
inline Plane derive_ey(const ImageU8& img, const EyConfig& cfg) {
    cfg.validate();
    double wr = cfg.swap_rb ? 0.0722 : 0.2126;
    double wb = cfg.swap_rb ? 0.2126 : 0.0722;
    Plane l(img.height, img.width);
    double max_l = 0.0;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double v = wr * img.at(r, c, 0) + 0.7152 * img.at(r, c, 1) + wb * img.at(r, c, 2);
            l.at(r, c) = v;
            max_l = std::max(max_l, v);
        }
    Plane ey(img.height, img.width);
    if (max_l <= 0.0) return ey;
    for (int64_t i = 0; i < l.size(); ++i)
        ey.data[static_cast<size_t>(i)] = 255.0 * std::pow(l.data[static_cast<size_t>(i)] / max_l,
                                                           static_cast<double>(cfg.exponent));
    return ey;
}

inline Plane plane_absdiff(const Plane& a, const Plane& b) {
    if (!a.same_size(b)) throw std::invalid_argument("plane_absdiff: size mismatch");
    Plane out(a.height, a.width);
    for (int64_t i = 0; i < a.size(); ++i)
        out.data[static_cast<size_t>(i)] = std::abs(a.data[static_cast<size_t>(i)] - b.data[static_cast<size_t>(i)]);
    return out;
}

enum class ChannelMode { RGB, RGB_A, RGB_Y, RGB_Y_A, RGB_EY, RGB_EY_A };

inline const std::vector<std::string>& channel_tags(ChannelMode m) {
    static const std::vector<std::string> rgb{"R", "G", "B"};
    static const std::vector<std::string> rgb_a{"R", "G", "B", "A"};
    static const std::vector<std::string> rgb_y{"R", "G", "B", "Y"};
    static const std::vector<std::string> rgb_y_a{"R", "G", "B", "Y", "A"};
    static const std::vector<std::string> rgb_ey{"R", "G", "B", "eY"};
    static const std::vector<std::string> rgb_ey_a{"R", "G", "B", "eY", "A"};
    switch (m) {
        case ChannelMode::RGB: return rgb;
        case ChannelMode::RGB_A: return rgb_a;
        case ChannelMode::RGB_Y: return rgb_y;
        case ChannelMode::RGB_Y_A: return rgb_y_a;
        case ChannelMode::RGB_EY: return rgb_ey;
        case ChannelMode::RGB_EY_A: return rgb_ey_a;
    }
    throw std::invalid_argument("channel_tags: unknown mode");
}

inline int channel_count(ChannelMode m) { return static_cast<int>(channel_tags(m).size()); }

inline std::string channel_mode_name(ChannelMode m) {
    switch (m) {
        case ChannelMode::RGB: return "RGB";
        case ChannelMode::RGB_A: return "RGB+A";
        case ChannelMode::RGB_Y: return "RGB+Y";
        case ChannelMode::RGB_Y_A: return "RGB+Y+A";
        case ChannelMode::RGB_EY: return "RGB+eY";
        case ChannelMode::RGB_EY_A: return "RGB+eY+A";
    }
    throw std::invalid_argument("channel_mode_name: unknown mode");
}

inline ChannelMode parse_channel_mode(const std::string& s) {
    for (ChannelMode m : {ChannelMode::RGB, ChannelMode::RGB_A, ChannelMode::RGB_Y, ChannelMode::RGB_Y_A,
                          ChannelMode::RGB_EY, ChannelMode::RGB_EY_A})
        if (channel_mode_name(m) == s) return m;
    throw std::invalid_argument("unknown channel mode '" + s + "' (expected RGB, RGB+A, RGB+Y, RGB+Y+A, RGB+eY or RGB+eY+A)");
}

struct MergedTensor {
    std::vector<std::string> channels;
    Tensor data;  // C x H x W, values scaled to [0,1]
};

// Multi-colour-space tensor merge. RGB planes come first, then the extra
// luminance/chromaticity planes per mode; everything rescaled to [0,1].
inline MergedTensor merge_channels(const ImageU8& img, ChannelMode mode, const EyConfig& cfg = {}) {
    const auto& tags = channel_tags(mode);
    int C = static_cast<int>(tags.size());
    int H = img.height, W = img.width;
    MergedTensor out;
    out.channels = tags;
    out.data = Tensor(Shape{C, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                out.data[(static_cast<int64_t>(c) * H + y) * W + x] = img.at(y, x, c) / 255.0;
    int next = 3;
    auto put_plane = [&](const Plane& p) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out.data[(static_cast<int64_t>(next) * H + y) * W + x] = p.at(y, x) / 255.0;
        ++next;
    };
    if (mode == ChannelMode::RGB_Y || mode == ChannelMode::RGB_Y_A) put_plane(rgb_to_ycrcb_y(img));
    if (mode == ChannelMode::RGB_EY || mode == ChannelMode::RGB_EY_A) put_plane(derive_ey(img, cfg));
    if (mode == ChannelMode::RGB_A || mode == ChannelMode::RGB_Y_A || mode == ChannelMode::RGB_EY_A)
        put_plane(rgb_to_lab_a(img));
    return out;
}

}  // namespace cws
