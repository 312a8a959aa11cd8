#pragma once

// Independent reference implementations used to check the library. These
// are deliberately written as plain scalar loops, separate from the
// implementation paths they verify.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ppx/geometry.hpp"
#include "ppx/image.hpp"
#include "ppx/metrics.hpp"
#include "ppx/rng.hpp"
#include "ppx/tensor.hpp"

namespace oracle {

inline double scalar_mse(const ppx::ImageBuffer& a, const ppx::ImageBuffer& b) {
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            for (int c = 0; c < a.channels; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                sum += d * d;
                ++n;
            }
    return sum / double(n);
}

inline double scalar_psnr(const ppx::ImageBuffer& a, const ppx::ImageBuffer& b, double peak = 1.0) {
    const double m = scalar_mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(peak / std::sqrt(m));
}

// Per-window SSIM with explicit loops: weighted means first, then
// weighted central moments.
inline ppx::ImageBuffer scalar_ssim_map(const ppx::ImageBuffer& a, const ppx::ImageBuffer& b,
                                        const ppx::SsimConfig& cfg = {}) {
    const int win = cfg.window;
    const int r = win / 2;
    std::vector<double> w1(win);
    double wsum = 0.0;
    for (int i = 0; i < win; ++i) {
        const double d = i - r;
        w1[std::size_t(i)] = std::exp(-(d * d) / (2.0 * cfg.window_sigma * cfg.window_sigma));
        wsum += w1[std::size_t(i)];
    }
    for (double& v : w1) v /= wsum;

    const double c1 = (cfg.k1 * cfg.peak) * (cfg.k1 * cfg.peak);
    const double c2 = (cfg.k2 * cfg.peak) * (cfg.k2 * cfg.peak);
    ppx::ImageBuffer out = ppx::make_image(a.width - win + 1, a.height - win + 1, 1);
    for (int cy = 0; cy + win <= a.height; ++cy)
        for (int cx = 0; cx + win <= a.width; ++cx) {
            double mu_a = 0.0, mu_b = 0.0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double w = w1[std::size_t(dy)] * w1[std::size_t(dx)];
                    mu_a += w * a.at(cy + dy, cx + dx);
                    mu_b += w * b.at(cy + dy, cx + dx);
                }
            double var_a = 0.0, var_b = 0.0, cov = 0.0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double w = w1[std::size_t(dy)] * w1[std::size_t(dx)];
                    const double da = a.at(cy + dy, cx + dx) - mu_a;
                    const double db = b.at(cy + dy, cx + dx) - mu_b;
                    var_a += w * da * da;
                    var_b += w * db * db;
                    cov += w * da * db;
                }
            out.at(cy, cx) = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    return out;
}

inline double scalar_mean_ssim(const ppx::ImageBuffer& a, const ppx::ImageBuffer& b,
                               const ppx::SsimConfig& cfg = {}) {
    const ppx::ImageBuffer map = scalar_ssim_map(a, b, cfg);
    double sum = 0.0;
    for (double v : map.data) sum += v;
    return sum / double(map.data.size());
}

// Exhaustive pair counting: (#concordant + 0.5 #ties) / (#pos * #neg).
inline double pair_count_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double num = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) {
            ++n_pos;
            continue;
        }
        ++n_neg;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 1) continue;
            if (scores[j] > scores[i]) num += 1.0;
            else if (scores[j] == scores[i]) num += 0.5;
        }
    }
    return num / (double(n_pos) * double(n_neg));
}

// Central finite differences over every parameter element; returns the
// worst relative error against the analytic gradient.
template <class LossFn>
double gradcheck_max_rel_err(const std::vector<ppx::ParamBlock>& blocks, const ppx::GradSet& analytic,
                             LossFn loss, double h = 1e-3) {
    double worst = 0.0;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        for (std::size_t j = 0; j < blocks[bi].n; ++j) {
            double& p = blocks[bi].p[j];
            const double saved = p;
            p = saved + h;
            const double lp = loss();
            p = saved - h;
            const double lm = loss();
            p = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double g = analytic[bi][j];
            const double rel = std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline ppx::ImageBuffer random_image(int w, int h, ppx::Rng& rng, double lo = 0.0, double hi = 1.0) {
    ppx::ImageBuffer img = ppx::make_image(w, h, 1);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

// Convex quads built by insetting rectangle corners by < 1/4 of each side.
inline ppx::CornerQuad random_convex_quad(ppx::Rng& rng, double w = 100.0, double h = 80.0) {
    const double kx = 0.24 * w, ky = 0.24 * h;
    ppx::CornerQuad q;
    q.tl = {rng.uniform(0.0, kx), rng.uniform(0.0, ky)};
    q.tr = {w - rng.uniform(0.0, kx), rng.uniform(0.0, ky)};
    q.br = {w - rng.uniform(0.0, kx), h - rng.uniform(0.0, ky)};
    q.bl = {rng.uniform(0.0, kx), h - rng.uniform(0.0, ky)};
    return q;
}

} // namespace oracle
