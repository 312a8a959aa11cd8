#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ppx/errors.hpp"

namespace ppx {

/// Universal pixel carrier: H x W x C grid of intensities in [0,1],
/// row-major with interleaved channels. Intensity 1.0 corresponds to
/// 8-bit code 255 at the quantization boundary (see image_io.hpp).
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    double& at(int y, int x, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
    double at(int y, int x, int c = 0) const { return data[(std::size_t(y) * width + x) * channels + c]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const ImageBuffer& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

struct PixelPoint {
    double x = 0.0;
    double y = 0.0;
};

inline ImageBuffer make_image(int width, int height, int channels = 1, double fill = 0.0) {
    if (width < 1 || height < 1) throw InvalidArgument("image dimensions must be >= 1");
    if (channels != 1 && channels != 3) throw InvalidArgument("channel count must be 1 or 3");
    ImageBuffer img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.data.assign(std::size_t(width) * height * channels, fill);
    return img;
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline void clamp_image(ImageBuffer& img) {
    for (double& v : img.data) v = clamp01(v);
}

/// Edge-clamped bilinear sample at fractional coordinates. Fractional
/// offsets below 1e-9 are snapped so that integer-coordinate sampling is
/// exact even when the coordinates carry solver round-off.
inline double sample_bilinear(const ImageBuffer& img, double x, double y, int c = 0) {
    const auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    const auto snap = [](double f) { return f < 1e-9 ? 0.0 : (f > 1.0 - 1e-9 ? 1.0 : f); };
    int x0 = int(std::floor(x));
    int y0 = int(std::floor(y));
    const double fx = snap(x - x0);
    const double fy = snap(y - y0);
    const int x1 = clampi(x0 + 1, img.width - 1);
    const int y1 = clampi(y0 + 1, img.height - 1);
    x0 = clampi(x0, img.width - 1);
    y0 = clampi(y0, img.height - 1);
    const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
    const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
    return top * (1.0 - fy) + bot * fy;
}

/// Luma conversion with the legacy broadcast weights 0.299/0.587/0.114.
/// 1-channel input is returned unchanged.
inline ImageBuffer to_grayscale(const ImageBuffer& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw InvalidArgument("to_grayscale expects 1 or 3 channels");
    ImageBuffer out = make_image(img.width, img.height, 1);
    const std::size_t n = std::size_t(img.width) * img.height;
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = &img.data[i * 3];
        out.data[i] = clamp01(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
    }
    return out;
}

/// Bilinear resize with the align-corners convention: source coordinate is
/// dst * (src_len-1)/(dst_len-1); a 1-wide destination samples the center.
inline ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw InvalidArgument("resize target must be >= 1");
    ImageBuffer out = make_image(out_w, out_h, img.channels);
    const double sx = out_w > 1 ? double(img.width - 1) / double(out_w - 1) : 0.0;
    const double sy = out_h > 1 ? double(img.height - 1) / double(out_h - 1) : 0.0;
    const double cx = (img.width - 1) / 2.0;
    const double cy = (img.height - 1) / 2.0;
    for (int y = 0; y < out_h; ++y) {
        const double fy = out_h > 1 ? y * sy : cy;
        for (int x = 0; x < out_w; ++x) {
            const double fx = out_w > 1 ? x * sx : cx;
            for (int c = 0; c < img.channels; ++c) {
                out.at(y, x, c) = sample_bilinear(img, fx, fy, c);
            }
        }
    }
    return out;
}

/// All fully contained size x size patches in raster order.
/// Count is (floor((H-size)/stride)+1) * (floor((W-size)/stride)+1).
inline std::vector<ImageBuffer> extract_patches(const ImageBuffer& img, int size, int stride) {
    if (size < 1 || size > std::min(img.width, img.height))
        throw InvalidArgument("patch size must satisfy 1 <= size <= min(width, height)");
    if (stride < 1) throw InvalidArgument("stride must be >= 1");
    std::vector<ImageBuffer> patches;
    for (int y0 = 0; y0 + size <= img.height; y0 += stride) {
        for (int x0 = 0; x0 + size <= img.width; x0 += stride) {
            ImageBuffer p = make_image(size, size, img.channels);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    for (int c = 0; c < img.channels; ++c)
                        p.at(y, x, c) = img.at(y0 + y, x0 + x, c);
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

} // namespace ppx
