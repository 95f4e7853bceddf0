#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "cws/image.hpp"
#include "cws/rng.hpp"

namespace cws {

struct Sample {
    std::string id;
    ImageU8 image;
    MaskBin mask;
    std::string source;
};

inline ImageU8 hflip_image(const ImageU8& img) {
    ImageU8 out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}
inline ImageU8 vflip_image(const ImageU8& img) {
    ImageU8 out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
    return out;
}
inline MaskBin hflip_mask(const MaskBin& m) {
    MaskBin out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
    return out;
}
inline MaskBin vflip_mask(const MaskBin& m) {
    MaskBin out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(m.height - 1 - y, x);
    return out;
}

inline Plane hflip_plane(const Plane& p) {
    Plane out(p.height, p.width);
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) out.at(y, x) = p.at(y, p.width - 1 - x);
    return out;
}
inline Plane vflip_plane(const Plane& p) {
    Plane out(p.height, p.width);
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) out.at(y, x) = p.at(p.height - 1 - y, x);
    return out;
}

inline ImageU8 resize_image(const ImageU8& img, int oh, int ow) {
    ImageU8 out(oh, ow);
    double sy = static_cast<double>(img.height) / oh, sx = static_cast<double>(img.width) / ow;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double fy = std::max(0.0, (y + 0.5) * sy - 0.5), fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            int y0 = std::min(static_cast<int>(fy), img.height - 1), x0 = std::min(static_cast<int>(fx), img.width - 1);
            int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
            double ly = fy - y0, lx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                double v = (1 - ly) * ((1 - lx) * img.at(y0, x0, c) + lx * img.at(y0, x1, c)) +
                           ly * ((1 - lx) * img.at(y1, x0, c) + lx * img.at(y1, x1, c));
                out.at(y, x, c) = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    return out;
}

inline MaskBin resize_mask(const MaskBin& m, int oh, int ow) {
    MaskBin out(oh, ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            int sy = std::min(static_cast<int>((y + 0.5) * m.height / oh), m.height - 1);
            int sx = std::min(static_cast<int>((x + 0.5) * m.width / ow), m.width - 1);
            out.at(y, x) = m.at(sy, sx);
        }
    return out;
}

struct AugmentConfig {
    bool center_crop = false;
    bool random_crop = false;
    bool hflip = false;
    bool vflip = false;
    bool shift_scale_rotate = false;
    bool gauss_noise = false;
    bool brightness_contrast = false;
    bool clahe = false;
    bool multi_scale = false;

    double crop_frac = 0.85;

    bool any() const {
        return center_crop || random_crop || hflip || vflip || shift_scale_rotate || gauss_noise ||
               brightness_contrast || clahe || multi_scale;
    }
    static AugmentConfig all_on() {
        AugmentConfig c;
        c.center_crop = c.random_crop = c.hflip = c.vflip = c.shift_scale_rotate = true;
        c.gauss_noise = c.brightness_contrast = c.clahe = c.multi_scale = true;
        return c;
    }
};

namespace detail {

inline int reflect101(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

// crop a fraction of the extent at the given origin, then resize back
inline void crop_resize(Sample& s, int y0, int x0, int ch, int cw) {
    ImageU8 img(ch, cw);
    MaskBin mask(ch, cw);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = s.image.at(y0 + y, x0 + x, c);
            mask.at(y, x) = s.mask.at(y0 + y, x0 + x);
        }
    int H = s.image.height, W = s.image.width;
    s.image = resize_image(img, H, W);
    s.mask = resize_mask(mask, H, W);
}

// affine warp by inverse mapping; reflect-101 border, nearest for the mask
inline void warp_affine(Sample& s, double angle_deg, double scale, double shift_y, double shift_x) {
    int H = s.image.height, W = s.image.width;
    double a = angle_deg * M_PI / 180.0;
    double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    double cos_a = std::cos(a) / scale, sin_a = std::sin(a) / scale;
    ImageU8 img(H, W);
    MaskBin mask(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double dy = y - cy - shift_y * H, dx = x - cx - shift_x * W;
            double sy = cy + (cos_a * dy - sin_a * dx);
            double sx = cx + (sin_a * dy + cos_a * dx);
            int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            double ly = sy - y0, lx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                double v = 0;
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j) {
                        double w = (i ? ly : 1 - ly) * (j ? lx : 1 - lx);
                        v += w * s.image.at(reflect101(y0 + i, H), reflect101(x0 + j, W), c);
                    }
                img.at(y, x, c) = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
            int ny = reflect101(static_cast<int>(std::lround(sy)), H);
            int nx = reflect101(static_cast<int>(std::lround(sx)), W);
            mask.at(y, x) = s.mask.at(ny, nx);
        }
    s.image = std::move(img);
    s.mask = std::move(mask);
}

// contrast limited adaptive histogram equalisation on the luma, applied to
// RGB through the luma ratio; 8x8 tiles, clip limit 2.0
inline void clahe_luma(ImageU8& img) {
    const int tiles = 8;
    const double clip_limit = 2.0;
    int H = img.height, W = img.width;
    std::vector<int> luma(static_cast<size_t>(H) * W);
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
        double y = 0.299 * img.data[static_cast<size_t>(i) * 3] + 0.587 * img.data[static_cast<size_t>(i) * 3 + 1] +
                   0.114 * img.data[static_cast<size_t>(i) * 3 + 2];
        luma[static_cast<size_t>(i)] = static_cast<int>(std::clamp(std::lround(y), 0L, 255L));
    }
    int th = std::max(1, H / tiles), tw = std::max(1, W / tiles);
    int ny = (H + th - 1) / th, nx = (W + tw - 1) / tw;
    std::vector<std::array<double, 256>> luts(static_cast<size_t>(ny * nx));
    for (int ty = 0; ty < ny; ++ty)
        for (int tx = 0; tx < nx; ++tx) {
            int y0 = ty * th, y1 = std::min(H, y0 + th);
            int x0 = tx * tw, x1 = std::min(W, x0 + tw);
            std::array<double, 256> hist{};
            int cnt = (y1 - y0) * (x1 - x0);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) hist[static_cast<size_t>(luma[static_cast<size_t>(y) * W + x])] += 1.0;
            double limit = clip_limit * cnt / 256.0;
            double excess = 0;
            for (auto& h : hist)
                if (h > limit) {
                    excess += h - limit;
                    h = limit;
                }
            for (auto& h : hist) h += excess / 256.0;
            auto& lut = luts[static_cast<size_t>(ty * nx + tx)];
            double cdf = 0;
            for (int v = 0; v < 256; ++v) {
                cdf += hist[static_cast<size_t>(v)];
                lut[static_cast<size_t>(v)] = 255.0 * cdf / cnt;
            }
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double fy = (y - th / 2.0) / th, fx = (x - tw / 2.0) / tw;
            int ty0 = std::clamp(static_cast<int>(std::floor(fy)), 0, ny - 1);
            int tx0 = std::clamp(static_cast<int>(std::floor(fx)), 0, nx - 1);
            int ty1 = std::min(ty0 + 1, ny - 1), tx1 = std::min(tx0 + 1, nx - 1);
            double wy = std::clamp(fy - ty0, 0.0, 1.0), wx = std::clamp(fx - tx0, 0.0, 1.0);
            int v = luma[static_cast<size_t>(y) * W + x];
            double eq = (1 - wy) * ((1 - wx) * luts[static_cast<size_t>(ty0 * nx + tx0)][static_cast<size_t>(v)] +
                                    wx * luts[static_cast<size_t>(ty0 * nx + tx1)][static_cast<size_t>(v)]) +
                        wy * ((1 - wx) * luts[static_cast<size_t>(ty1 * nx + tx0)][static_cast<size_t>(v)] +
                              wx * luts[static_cast<size_t>(ty1 * nx + tx1)][static_cast<size_t>(v)]);
            double ratio = eq / std::max(1, v);
            for (int c = 0; c < 3; ++c) {
                double nv = img.at(y, x, c) * ratio;
                img.at(y, x, c) = static_cast<uint8_t>(std::clamp(std::lround(nv), 0L, 255L));
            }
        }
}

}  // namespace detail

// The nine-transform pipeline. Geometric transforms hit image and mask
// identically; photometric ones touch the image only. Each enabled transform
// fires with probability 1/2 drawn from the per-sample seed, so repeated
// calls with the same seed are bit-identical.
inline Sample augment(const Sample& in, const AugmentConfig& cfg, uint64_t seed) {
    Sample s = in;
    if (!cfg.any()) return s;
    auto rng = make_rng(seed, 0xA06);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    int H = s.image.height, W = s.image.width;
    if (cfg.center_crop && coin(rng)) {
        int ch = std::max(1, static_cast<int>(H * cfg.crop_frac)), cw = std::max(1, static_cast<int>(W * cfg.crop_frac));
        detail::crop_resize(s, (H - ch) / 2, (W - cw) / 2, ch, cw);
    }
    if (cfg.random_crop && coin(rng)) {
        int ch = std::max(1, static_cast<int>(H * cfg.crop_frac)), cw = std::max(1, static_cast<int>(W * cfg.crop_frac));
        int y0 = static_cast<int>(unit(rng) * (H - ch + 1)), x0 = static_cast<int>(unit(rng) * (W - cw + 1));
        detail::crop_resize(s, std::min(y0, H - ch), std::min(x0, W - cw), ch, cw);
    }
    if (cfg.hflip && coin(rng)) {
        s.image = hflip_image(s.image);
        s.mask = hflip_mask(s.mask);
    }
    if (cfg.vflip && coin(rng)) {
        s.image = vflip_image(s.image);
        s.mask = vflip_mask(s.mask);
    }
    if (cfg.shift_scale_rotate && coin(rng)) {
        double angle = (unit(rng) * 2 - 1) * 15.0;
        double scale = 1.0 + (unit(rng) * 2 - 1) * 0.1;
        double sy = (unit(rng) * 2 - 1) * 0.0625, sx = (unit(rng) * 2 - 1) * 0.0625;
        detail::warp_affine(s, angle, scale, sy, sx);
    }
    if (cfg.gauss_noise && coin(rng)) {
        std::normal_distribution<double> noise(0.0, 5.0 + unit(rng) * 10.0);
        for (auto& v : s.image.data)
            v = static_cast<uint8_t>(std::clamp(std::lround(v + noise(rng)), 0L, 255L));
    }
    if (cfg.brightness_contrast && coin(rng)) {
        double b = (unit(rng) * 2 - 1) * 0.2 * 255.0;
        double c = 1.0 + (unit(rng) * 2 - 1) * 0.2;
        for (auto& v : s.image.data)
            v = static_cast<uint8_t>(std::clamp(std::lround((v - 128.0) * c + 128.0 + b), 0L, 255L));
    }
    if (cfg.clahe && coin(rng)) detail::clahe_luma(s.image);
    if (cfg.multi_scale && coin(rng)) {
        double scales[3] = {0.75, 1.0, 1.25};
        double sc = scales[static_cast<int>(unit(rng) * 3) % 3];
        if (sc != 1.0) {
            int nh = std::max(1, static_cast<int>(H * sc)), nw = std::max(1, static_cast<int>(W * sc));
            ImageU8 scaled = resize_image(s.image, nh, nw);
            MaskBin smask = resize_mask(s.mask, nh, nw);
            if (sc > 1.0) {  // centre-crop back
                int y0 = (nh - H) / 2, x0 = (nw - W) / 2;
                ImageU8 img(H, W);
                MaskBin mask(H, W);
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        for (int c = 0; c < 3; ++c) img.at(y, x, c) = scaled.at(y0 + y, x0 + x, c);
                        mask.at(y, x) = smask.at(y0 + y, x0 + x);
                    }
                s.image = std::move(img);
                s.mask = std::move(mask);
            } else {  // reflect-pad back
                ImageU8 img(H, W);
                MaskBin mask(H, W);
                int y0 = (H - nh) / 2, x0 = (W - nw) / 2;
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        int sy2 = detail::reflect101(y - y0, nh), sx2 = detail::reflect101(x - x0, nw);
                        for (int c = 0; c < 3; ++c) img.at(y, x, c) = scaled.at(sy2, sx2, c);
                        mask.at(y, x) = smask.at(sy2, sx2);
                    }
                s.image = std::move(img);
                s.mask = std::move(mask);
            }
        }
    }
    return s;
}

}  // namespace cws
