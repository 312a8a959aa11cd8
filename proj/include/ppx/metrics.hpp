#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "ppx/errors.hpp"
#include "ppx/image.hpp"

namespace ppx {

/// SSIM parameters. Defaults are the standard published constants:
/// k1=0.01, k2=0.03, 11x11 Gaussian window with sigma 1.5. peak is 1.0 in
/// the normalized intensity domain (the 8-bit peak 255 maps to 1.0).
struct SsimConfig {
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 1.0;
    int window = 11;
    double window_sigma = 1.5;

    double c1() const { return (k1 * peak) * (k1 * peak); }
    double c2() const { return (k2 * peak) * (k2 * peak); }

    void validate() const {
        if (k1 <= 0.0 || k2 <= 0.0) throw InvalidArgument("SSIM k1, k2 must be > 0");
        if (window < 3 || window % 2 == 0) throw InvalidArgument("SSIM window must be odd and >= 3");
        if (window_sigma <= 0.0) throw InvalidArgument("SSIM window sigma must be > 0");
    }
};

struct QualityScore {
    double mse = 0.0;
    double psnr_db = 0.0; // +inf when mse == 0
    double mssim = 0.0;
};

inline void require_same_shape(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b)) throw DimensionMismatch("image dimensions/channels differ");
}

/// Mean over all samples of (a-b)^2.
inline double mse(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return sum / double(a.data.size());
}

/// 20*log10(peak/sqrt(MSE)) in dB; identical images give +inf.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(peak / std::sqrt(m));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    const int r = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - r;
        w[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable valid-region convolution with a normalized 1-D window applied
// along both axes. Input H x W, output (H-win+1) x (W-win+1).
inline std::vector<double> valid_filter(const std::vector<double>& in, int h, int w,
                                        const std::vector<double>& k) {
    const int win = int(k.size());
    const int ow = w - win + 1;
    const int oh = h - win + 1;
    std::vector<double> rows(std::size_t(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) s += k[i] * in[std::size_t(y) * w + x + i];
            rows[std::size_t(y) * ow + x] = s;
        }
    }
    std::vector<double> out(std::size_t(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) s += k[i] * rows[std::size_t(y + i) * ow + x];
            out[std::size_t(y) * ow + x] = s;
        }
    }
    return out;
}

} // namespace detail

/// Per-window SSIM over every valid window center (no padding; output
/// shrinks by window-1 along each axis). Gaussian-weighted window stats.
inline ImageBuffer ssim_map(const ImageBuffer& a, const ImageBuffer& b, const SsimConfig& cfg = {}) {
    cfg.validate();
    require_same_shape(a, b);
    if (a.channels != 1) throw InvalidArgument("ssim_map expects 1-channel images");
    if (a.width < cfg.window || a.height < cfg.window)
        throw DimensionMismatch("image smaller than the SSIM window");

    const int h = a.height, w = a.width;
    const std::vector<double> win = detail::gaussian_window(cfg.window, cfg.window_sigma);

    const std::size_t n = a.data.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a.data[i] * a.data[i];
        bb[i] = b.data[i] * b.data[i];
        ab[i] = a.data[i] * b.data[i];
    }
    const std::vector<double> mu_a = detail::valid_filter(a.data, h, w, win);
    const std::vector<double> mu_b = detail::valid_filter(b.data, h, w, win);
    const std::vector<double> e_aa = detail::valid_filter(aa, h, w, win);
    const std::vector<double> e_bb = detail::valid_filter(bb, h, w, win);
    const std::vector<double> e_ab = detail::valid_filter(ab, h, w, win);

    const double c1 = cfg.c1();
    const double c2 = cfg.c2();
    ImageBuffer out = make_image(w - cfg.window + 1, h - cfg.window + 1, 1);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = std::max(0.0, e_aa[i] - ma * ma);
        const double vb = std::max(0.0, e_bb[i] - mb * mb);
        const double cov = e_ab[i] - ma * mb;
        const double s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
        // |SSIM| <= 1 holds exactly; trim rounding overshoot.
        out.data[i] = std::min(1.0, std::max(-1.0, s));
    }
    return out;
}

/// Arithmetic mean of the ssim_map values.
inline double mean_ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimConfig& cfg = {}) {
    const ImageBuffer map = ssim_map(a, b, cfg);
    double sum = 0.0;
    for (double v : map.data) sum += v;
    return sum / double(map.data.size());
}

inline QualityScore quality_score(const ImageBuffer& a, const ImageBuffer& b, const SsimConfig& cfg = {}) {
    QualityScore q;
    q.mse = mse(a, b);
    q.psnr_db = q.mse == 0.0 ? std::numeric_limits<double>::infinity()
                             : 20.0 * std::log10(cfg.peak / std::sqrt(q.mse));
    q.mssim = mean_ssim(a, b, cfg);
    return q;
}

} // namespace ppx
