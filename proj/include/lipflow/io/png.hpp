#pragma once

// 8-bit RGB PNG frames and an animated PNG preview, via libpng.

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "lipflow/tensor.hpp"

namespace lipflow::io {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline std::vector<png_byte> quantize_frame(const VideoClip& v, int t) {
    std::vector<png_byte> out(v.frame_size());
    const float* px = v.frame(t);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<png_byte>(std::lround(std::clamp(px[i], 0.0f, 1.0f) * 255.0f));
    return out;
}

inline std::vector<png_bytep> row_pointers(std::vector<png_byte>& rgb, int h, int w) {
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<std::size_t>(y) * w * 3;
    return rows;
}

/// Writes frames of `v` as a PNG (one frame) or APNG (several frames).
inline void write_frames(const std::string& path, const VideoClip& v, int first, int count, bool animated) {
    require(count >= 1 && first >= 0 && first + count <= v.frames, "png: frame range outside the clip");
    File f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("png: cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: out of memory");
    }
    std::vector<std::vector<png_byte>> frames;
    for (int t = first; t < first + count; ++t) frames.push_back(quantize_frame(v, t));
    std::vector<std::vector<png_bytep>> rows;
    for (auto& fr : frames) rows.push_back(row_pointers(fr, v.height, v.width));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: encoding failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(v.width), static_cast<png_uint_32>(v.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (animated) {
        png_set_acTL(png, info, static_cast<png_uint_32>(count), 0);
        png_write_info(png, info);
        const auto den = static_cast<png_uint_16>(std::max(1L, std::lround(v.fps)));
        for (int i = 0; i < count; ++i) {
            png_write_frame_head(png, info, rows[i].data(), static_cast<png_uint_32>(v.width),
                                 static_cast<png_uint_32>(v.height), 0, 0, 1, den, PNG_DISPOSE_OP_NONE,
                                 PNG_BLEND_OP_SOURCE);
            png_write_image(png, rows[i].data());
            png_write_frame_tail(png, info);
        }
    } else {
        png_write_info(png, info);
        png_write_image(png, rows[0].data());
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_png(const std::string& path, const VideoClip& v, int frame = 0) {
    detail::write_frames(path, v, frame, 1, false);
}

/// Animated preview of the whole clip at its frame rate, looping.
inline void write_apng(const std::string& path, const VideoClip& v) {
    detail::write_frames(path, v, 0, v.frames, true);
}

/// Read a PNG as a one-frame clip (first frame only for animations).
inline VideoClip read_png(const std::string& path) {
    detail::File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("png: cannot open " + path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw DecodeError("png: bad signature", 0);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: out of memory");
    }
    std::vector<png_byte> buf;
    std::vector<png_bytep> rows;
    VideoClip out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("png: corrupt image data in " + path, static_cast<std::size_t>(std::ftell(f.get())));
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) longjmp(png_jmpbuf(png), 1);
    buf.resize(static_cast<std::size_t>(h) * w * 3);
    rows = detail::row_pointers(buf, h, w);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    out = VideoClip(1, h, w);
    for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = buf[i] / 255.0f;
    return out;
}

}  // namespace lipflow::io
