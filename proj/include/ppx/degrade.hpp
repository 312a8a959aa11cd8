#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "ppx/errors.hpp"
#include "ppx/geometry.hpp"
#include "ppx/image.hpp"
#include "ppx/image_io.hpp"
#include "ppx/metrics.hpp"
#include "ppx/rng.hpp"

namespace ppx {

/// Parametric screen-photo defect model. A config with every amplitude at
/// zero and gamma = gain = 1, offset = 0 is the identity: the photo is the
/// clean image embedded at integer corners, recoverable exactly.
struct DegradationConfig {
    double keystone_strength = 0.06; // max corner inset as a fraction of width/height; < 0.25 keeps quads convex
    double gamma = 1.30;
    double gain = 1.08;
    double offset = 0.07;
    double ambient_gradient_amp = 0.12; // linear ramp, 0 at top-left to amp at bottom-right
    int glare_count = 3;
    double glare_radius = 11.0;   // px
    double glare_intensity = 0.20;
    double blur_sigma = 0.7;      // px, isotropic Gaussian
    double noise_sigma = 0.07;    // additive Gaussian, intensity units
    double moire_amp = 0.03;
    double moire_period = 5.5;    // px
    std::uint64_t seed = 1234;

    void validate() const {
        if (gamma <= 0.0) throw ConfigError("gamma must be > 0");
        if (keystone_strength < 0.0 || keystone_strength >= 0.25)
            throw ConfigError("keystone_strength must be in [0, 0.25)");
        if (gain < 0.0 || offset < -1.0 || ambient_gradient_amp < 0.0 || glare_count < 0 ||
            glare_radius < 0.0 || glare_intensity < 0.0 || blur_sigma < 0.0 || noise_sigma < 0.0 ||
            moire_amp < 0.0 || moire_period <= 0.0)
            throw ConfigError("degradation amplitudes must be non-negative");
    }
};

inline DegradationConfig identity_degradation(std::uint64_t seed = 0) {
    DegradationConfig cfg;
    cfg.keystone_strength = 0.0;
    cfg.gamma = 1.0;
    cfg.gain = 1.0;
    cfg.offset = 0.0;
    cfg.ambient_gradient_amp = 0.0;
    cfg.glare_count = 0;
    cfg.glare_intensity = 0.0;
    cfg.blur_sigma = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.moire_amp = 0.0;
    cfg.seed = seed;
    return cfg;
}

struct DegradedPair {
    ImageBuffer clean;
    ImageBuffer photo;
    CornerQuad true_corners; // clean-image rectangle as seen in the photo
    DegradationConfig config_used;
};

namespace detail {

inline void gaussian_blur_inplace(ImageBuffer& img, double sigma) {
    if (sigma <= 0.0) return;
    const int r = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-(double(i) * i) / (2.0 * sigma * sigma));
        sum += k[i + r];
    }
    for (double& v : k) v /= sum;

    const int w = img.width, h = img.height;
    const auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    ImageBuffer tmp = img;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) s += k[i + r] * img.at(y, clampi(x + i, w - 1));
            tmp.at(y, x) = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(clampi(y + i, h - 1), x);
            img.at(y, x) = s;
        }
}

} // namespace detail

/// Simulate a photograph of the image shown on a display. Defects are
/// applied in a fixed order: tone curve -> ambient gradient -> glare ->
/// moire -> blur -> noise -> keystone warp into a larger canvas (with the
/// true corner positions recorded) -> clamp. Deterministic given the seed.
inline DegradedPair degrade(const ImageBuffer& img, const DegradationConfig& cfg) {
    cfg.validate();
    if (img.channels != 1) throw InvalidArgument("degrade expects a 1-channel image");
    Rng rng(cfg.seed);
    const int w = img.width, h = img.height;

    ImageBuffer work = img;
    if (cfg.gamma != 1.0 || cfg.gain != 1.0 || cfg.offset != 0.0)
        for (double& v : work.data) v = cfg.gain * std::pow(v, cfg.gamma) + cfg.offset;

    if (cfg.ambient_gradient_amp > 0.0 && (w > 1 || h > 1)) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double tx = w > 1 ? double(x) / (w - 1) : 0.0;
                const double ty = h > 1 ? double(y) / (h - 1) : 0.0;
                work.at(y, x) += cfg.ambient_gradient_amp * 0.5 * (tx + ty);
            }
    }

    for (int g = 0; g < cfg.glare_count; ++g) {
        // Positions are always drawn so the stream layout does not depend
        // on the amplitudes.
        const double cx = rng.uniform(0.0, double(w - 1));
        const double cy = rng.uniform(0.0, double(h - 1));
        if (cfg.glare_intensity <= 0.0 || cfg.glare_radius <= 0.0) continue;
        const double r2 = 2.0 * cfg.glare_radius * cfg.glare_radius;
        const int reach = int(std::ceil(4.0 * cfg.glare_radius));
        const int y0 = std::max(0, int(cy) - reach), y1 = std::min(h - 1, int(cy) + reach);
        const int x0 = std::max(0, int(cx) - reach), x1 = std::min(w - 1, int(cx) + reach);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                work.at(y, x) += cfg.glare_intensity * std::exp(-d2 / r2);
            }
    }

    {
        const double theta = rng.uniform(0.0, 3.14159265358979323846);
        const double phase = rng.uniform(0.0, 6.28318530717958647692);
        if (cfg.moire_amp > 0.0) {
            const double fx = std::cos(theta) / cfg.moire_period;
            const double fy = std::sin(theta) / cfg.moire_period;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    work.at(y, x) += cfg.moire_amp *
                                     std::sin(6.28318530717958647692 * (fx * x + fy * y) + phase);
        }
    }

    detail::gaussian_blur_inplace(work, cfg.blur_sigma);

    for (double& v : work.data) v += cfg.noise_sigma * rng.normal();

    // Keystone: embed into a larger canvas. The base rectangle sits at an
    // integer margin; each corner is inset by a seeded amount bounded by
    // keystone_strength, which keeps the quad strictly convex (< 0.25).
    const int mx = std::max(2, int(std::lround(0.1 * w)));
    const int my = std::max(2, int(std::lround(0.1 * h)));
    const int cw = w + 2 * mx, ch = h + 2 * my;

    double ins[8];
    for (int i = 0; i < 4; ++i) {
        ins[2 * i] = rng.uniform() * cfg.keystone_strength * (w - 1);
        ins[2 * i + 1] = rng.uniform() * cfg.keystone_strength * (h - 1);
    }
    CornerQuad quad;
    quad.tl = {mx + ins[0], my + ins[1]};
    quad.tr = {mx + (w - 1) - ins[2], my + ins[3]};
    quad.br = {mx + (w - 1) - ins[4], my + (h - 1) - ins[5]};
    quad.bl = {mx + ins[6], my + (h - 1) - ins[7]};

    ImageBuffer photo = make_image(cw, ch, 1); // background outside the screen stays black
    if (ins[0] == 0 && ins[1] == 0 && ins[2] == 0 && ins[3] == 0 && ins[4] == 0 && ins[5] == 0 &&
        ins[6] == 0 && ins[7] == 0) {
        // Zero keystone: the embed is an integer translation, done as an
        // exact copy so the identity config round-trips bit-for-bit.
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) photo.at(y + my, x + mx) = work.at(y, x);
    } else {
        const Homography img_to_canvas = homography_from_corners(rect_quad(w, h), quad);
        const Homography canvas_to_img = invert(img_to_canvas);
        const double eps = 1e-9;
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) {
                const PixelPoint p = apply(canvas_to_img, {double(x), double(y)});
                if (p.x >= -eps && p.x <= (w - 1) + eps && p.y >= -eps && p.y <= (h - 1) + eps)
                    photo.at(y, x) = sample_bilinear(work, p.x, p.y);
            }
    }
    clamp_image(photo);

    return {img, std::move(photo), quad, cfg};
}

/// Mean PSNR between clean images and their rectified photos. +inf rows
/// are excluded; if every row is +inf the mean itself is +inf.
inline double mean_prior_psnr(const std::vector<DegradedPair>& pairs) {
    double sum = 0.0;
    int n = 0;
    for (const DegradedPair& p : pairs) {
        const ImageBuffer rect = rectify(p.photo, p.true_corners, p.clean.width, p.clean.height);
        const double v = psnr(p.clean, rect);
        if (std::isfinite(v)) {
            sum += v;
            ++n;
        }
    }
    return n > 0 ? sum / n : std::numeric_limits<double>::infinity();
}

/// Scale noise_sigma by bisection on [0, 0.5] until the corpus mean prior
/// PSNR lands within +-0.5 dB of the target. All other knobs stay at their
/// base values. At most 30 bisection steps.
inline DegradationConfig calibrate_severity(const std::vector<ImageBuffer>& corpus,
                                            double target_psnr_db,
                                            const DegradationConfig& base_cfg) {
    if (corpus.empty()) throw InvalidArgument("calibration corpus is empty");
    base_cfg.validate();

    const auto mean_psnr_at = [&](double sigma) {
        DegradationConfig cfg = base_cfg;
        cfg.noise_sigma = sigma;
        std::vector<DegradedPair> pairs;
        pairs.reserve(corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            cfg.seed = base_cfg.seed + i;
            pairs.push_back(degrade(corpus[i], cfg));
        }
        return mean_prior_psnr(pairs);
    };

    double lo = 0.0, hi = 0.5;
    double sigma = hi, achieved = mean_psnr_at(hi);
    if (achieved > target_psnr_db) {
        // Even the strongest noise is too clean: unreachable.
        throw CalibrationError("target PSNR below what noise_sigma in [0, 0.5] can produce");
    }
    for (int step = 0; step < 30; ++step) {
        const double mid = 0.5 * (lo + hi);
        const double v = mean_psnr_at(mid);
        sigma = mid;
        achieved = v;
        // bisect well inside the +-0.5 dB contract
        if (std::fabs(v - target_psnr_db) <= 0.1) break;
        if (v > target_psnr_db)
            lo = mid; // too clean, increase noise
        else
            hi = mid;
    }
    if (std::fabs(achieved - target_psnr_db) > 0.5)
        throw CalibrationError("calibration did not reach the target PSNR within 0.5 dB");
    DegradationConfig out = base_cfg;
    out.noise_sigma = sigma;
    return out;
}

/// Load every PNG/PGM in a directory (sorted by filename) as grayscale.
inline std::vector<ImageBuffer> load_image_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw FileNotFound("no such directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<ImageBuffer> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(to_grayscale(load_image(f)));
    return out;
}

/// n pairs with per-pair seeds cfg.seed + index; sources are cycled when n
/// exceeds the corpus size. Bit-reproducible.
inline std::vector<DegradedPair> generate_paired_corpus(const std::vector<ImageBuffer>& sources,
                                                        const DegradationConfig& cfg, int n) {
    if (sources.empty()) throw InvalidArgument("source corpus is empty");
    if (n < 0) throw InvalidArgument("pair count must be >= 0");
    std::vector<DegradedPair> pairs;
    pairs.reserve(n);
    for (int i = 0; i < n; ++i) {
        DegradationConfig c = cfg;
        c.seed = cfg.seed + std::uint64_t(i);
        pairs.push_back(degrade(sources[std::size_t(i) % sources.size()], c));
    }
    return pairs;
}

inline std::vector<DegradedPair> generate_paired_corpus(const std::filesystem::path& source_dir,
                                                        const DegradationConfig& cfg, int n) {
    return generate_paired_corpus(load_image_dir(source_dir), cfg, n);
}

} // namespace ppx
