#pragma once

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cws/image.hpp"

namespace cws {

namespace detail {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open file: " + path);
    return f;
}

// rows as 8-bit samples, `channels` per pixel
inline void read_png_raw(const std::string& path, int& height, int& width, int& channels,
                         std::vector<uint8_t>& out) {
    FilePtr f = open_file(path, "rb");
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw std::runtime_error("not a PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("PNG decode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);

    height = static_cast<int>(png_get_image_height(png, info));
    width = static_cast<int>(png_get_image_width(png, info));
    channels = static_cast<int>(png_get_channels(png, info));
    out.resize(static_cast<size_t>(height) * width * channels);
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<size_t>(y)] = out.data() + static_cast<size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

inline void write_png_raw(const std::string& path, int height, int width, int channels,
                          const uint8_t* data) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG encode failed: " + path);
    }
    png_init_io(png, f.get());
    int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // fixed encoder settings keep output bytes reproducible across runs
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(data + static_cast<size_t>(y) * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

inline void read_jpeg_rgb(const std::string& path, int& height, int& width, std::vector<uint8_t>& out) {
    FilePtr f = open_file(path, "rb");
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("JPEG decode failed: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    height = static_cast<int>(cinfo.output_height);
    width = static_cast<int>(cinfo.output_width);
    out.resize(static_cast<size_t>(height) * width * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.data() + static_cast<size_t>(cinfo.output_scanline) * width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
}

}  // namespace detail

// Reads an 8-bit RGB image; PNG or JPEG decided by signature bytes. Gray and
// RGBA PNGs are converted to RGB.
inline ImageU8 read_image(const std::string& path) {
    {
        detail::FilePtr probe = detail::open_file(path, "rb");
        unsigned char sig[2] = {0, 0};
        if (std::fread(sig, 1, 2, probe.get()) != 2) throw std::runtime_error("cannot read file: " + path);
        if (sig[0] == 0xFF && sig[1] == 0xD8) {
            ImageU8 img;
            detail::read_jpeg_rgb(path, img.height, img.width, img.data);
            return img;
        }
    }
    int h, w, ch;
    std::vector<uint8_t> raw;
    detail::read_png_raw(path, h, w, ch, raw);
    ImageU8 img(h, w);
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
        const uint8_t* px = raw.data() + i * ch;
        uint8_t r, g, b;
        if (ch == 1) r = g = b = px[0];
        else if (ch == 2) r = g = b = px[0];
        else
            r = px[0], g = px[1], b = px[2];
        img.data[static_cast<size_t>(i) * 3 + 0] = r;
        img.data[static_cast<size_t>(i) * 3 + 1] = g;
        img.data[static_cast<size_t>(i) * 3 + 2] = b;
    }
    return img;
}

// Mask PNGs store {0,255}; anything >= 128 counts as wound on load.
inline MaskBin read_mask(const std::string& path) {
    int h, w, ch;
    std::vector<uint8_t> raw;
    detail::read_png_raw(path, h, w, ch, raw);
    MaskBin m(h, w);
    for (int64_t i = 0; i < m.size(); ++i)
        m.data[static_cast<size_t>(i)] = raw[static_cast<size_t>(i) * ch] >= 128 ? 1 : 0;
    return m;
}

inline void write_image_png(const std::string& path, const ImageU8& img) {
    detail::write_png_raw(path, img.height, img.width, 3, img.data.data());
}

inline void write_mask_png(const std::string& path, const MaskBin& m) {
    std::vector<uint8_t> raw(m.data.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = m.data[i] ? 255 : 0;
    detail::write_png_raw(path, m.height, m.width, 1, raw.data());
}

// Plane values are rounded to the nearest 8-bit level.
inline void write_plane_png(const std::string& path, const Plane& p) {
    std::vector<uint8_t> raw(static_cast<size_t>(p.size()));
    for (int64_t i = 0; i < p.size(); ++i) {
        double v = std::round(p.data[static_cast<size_t>(i)]);
        raw[static_cast<size_t>(i)] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    detail::write_png_raw(path, p.height, p.width, 1, raw.data());
}

// Probability map in [0,1] written as 8-bit grayscale.
inline void write_prob_png(const std::string& path, const Plane& p) {
    std::vector<uint8_t> raw(static_cast<size_t>(p.size()));
    for (int64_t i = 0; i < p.size(); ++i) {
        double v = std::round(p.data[static_cast<size_t>(i)] * 255.0);
        raw[static_cast<size_t>(i)] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    detail::write_png_raw(path, p.height, p.width, 1, raw.data());
}

}  // namespace cws
