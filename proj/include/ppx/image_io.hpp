#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "ppx/errors.hpp"
#include "ppx/image.hpp"

namespace ppx {

// 8-bit code <-> normalized intensity. Quantization rounds half away from
// zero so outputs are bit-reproducible; dequantization is exactly c/255.
inline std::uint8_t quantize8(double v) {
    const long code = std::lround(255.0 * clamp01(v));
    return std::uint8_t(code < 0 ? 0 : (code > 255 ? 255 : code));
}

inline double dequantize8(std::uint8_t c) { return double(c) / 255.0; }

namespace detail {

struct FileHandle {
    std::FILE* f = nullptr;
    explicit FileHandle(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (f) std::fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

inline ImageBuffer load_png(std::FILE* f, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CorruptStream("corrupt PNG stream: " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    const png_byte depth = png_get_bit_depth(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw UnsupportedFormat("16-bit PNG not supported: " + path);
    }
    // Normalize to 8-bit gray or RGB: expand palettes and sub-byte gray,
    // drop alpha.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = int(png_get_image_width(png, info));
    const int height = int(png_get_image_height(png, info));
    const int channels = int(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw UnsupportedFormat("PNG channel layout not supported: " + path);
    }

    std::vector<std::uint8_t> raw(std::size_t(width) * height * channels);
    row_ptrs.resize(height);
    for (int y = 0; y < height; ++y) row_ptrs[y] = raw.data() + std::size_t(y) * width * channels;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageBuffer img = make_image(width, height, channels);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = dequantize8(raw[i]);
    return img;
}

// Binary PGM (P5), maxval <= 255.
inline ImageBuffer load_pgm(std::FILE* f, const std::string& path) {
    const auto next_token = [&]() -> std::string {
        int ch = std::fgetc(f);
        while (ch != EOF && (std::isspace(ch) || ch == '#')) {
            if (ch == '#') {
                while (ch != EOF && ch != '\n') ch = std::fgetc(f);
            }
            ch = std::fgetc(f);
        }
        std::string tok;
        while (ch != EOF && !std::isspace(ch)) {
            tok.push_back(char(ch));
            ch = std::fgetc(f);
        }
        if (tok.empty()) throw CorruptStream("truncated PGM header: " + path);
        return tok;
    };

    if (next_token() != "P5") throw UnsupportedFormat("not a binary PGM (P5): " + path);
    long width = 0, height = 0, maxval = 0;
    try {
        width = std::stol(next_token());
        height = std::stol(next_token());
        maxval = std::stol(next_token());
    } catch (const std::exception&) {
        throw CorruptStream("malformed PGM header: " + path);
    }
    if (width < 1 || height < 1) throw CorruptStream("malformed PGM header: " + path);
    if (maxval < 1 || maxval > 255) throw UnsupportedFormat("only 8-bit PGM supported: " + path);

    std::vector<std::uint8_t> raw(std::size_t(width) * height);
    if (std::fread(raw.data(), 1, raw.size(), f) != raw.size())
        throw CorruptStream("truncated PGM pixel data: " + path);

    ImageBuffer img = make_image(int(width), int(height), 1);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = dequantize8(raw[i]);
    return img;
}

} // namespace detail

/// Load an 8-bit PNG or binary PGM. Dequantizes code c to exactly c/255.
inline ImageBuffer load_image(const std::filesystem::path& path) {
    detail::FileHandle fh(path.string(), "rb");
    if (!fh.f) throw FileNotFound("no such file: " + path.string());

    unsigned char sig[8] = {0};
    const std::size_t got = std::fread(sig, 1, 8, fh.f);
    std::rewind(fh.f);
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (got >= 8 && std::memcmp(sig, png_sig, 8) == 0) return detail::load_png(fh.f, path.string());
    if (got >= 2 && sig[0] == 'P' && sig[1] == '5') return detail::load_pgm(fh.f, path.string());
    throw UnsupportedFormat("not a PNG or binary PGM file: " + path.string());
}

/// Save as 8-bit PNG (.png, gray or RGB) or binary PGM (.pgm, gray only).
inline void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    std::vector<std::uint8_t> raw(img.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = quantize8(img.data[i]);

    if (ext == ".pgm") {
        if (img.channels != 1) throw UnsupportedFormat("PGM output requires a 1-channel image");
        detail::FileHandle fh(path.string(), "wb");
        if (!fh.f) throw IoError("cannot open for writing: " + path.string());
        std::fprintf(fh.f, "P5\n%d %d\n255\n", img.width, img.height);
        if (std::fwrite(raw.data(), 1, raw.size(), fh.f) != raw.size())
            throw IoError("short write: " + path.string());
        return;
    }
    if (ext != ".png") throw UnsupportedFormat("unsupported output extension: " + path.string());

    detail::FileHandle fh(path.string(), "wb");
    if (!fh.f) throw IoError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> row_ptrs(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path.string());
    }
    png_init_io(png, fh.f);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        row_ptrs[y] = raw.data() + std::size_t(y) * img.width * img.channels;
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace ppx
