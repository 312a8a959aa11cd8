#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "ppx/errors.hpp"
#include "ppx/image.hpp"
#include "ppx/rng.hpp"

namespace ppx {

/// Dense NCHW tensor. All network math runs in double so analytic
/// gradients can be checked against finite differences tightly.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    static Tensor4 zeros(int n, int c, int h, int w) {
        Tensor4 t;
        t.n = n;
        t.c = c;
        t.h = h;
        t.w = w;
        t.v.assign(std::size_t(n) * c * h * w, 0.0);
        return t;
    }

    std::size_t plane() const { return std::size_t(h) * w; }
    std::size_t size() const { return v.size(); }
    double* plane_ptr(int b, int ch) { return v.data() + (std::size_t(b) * c + ch) * plane(); }
    const double* plane_ptr(int b, int ch) const { return v.data() + (std::size_t(b) * c + ch) * plane(); }
    double& at(int b, int ch, int y, int x) { return plane_ptr(b, ch)[std::size_t(y) * w + x]; }
    double at(int b, int ch, int y, int x) const { return plane_ptr(b, ch)[std::size_t(y) * w + x]; }

    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

#ifndef NDEBUG
#define PPX_CHECK_FINITE(t) assert((t).all_finite() && "non-finite tensor values")
#else
#define PPX_CHECK_FINITE(t) ((void)0)
#endif

inline Tensor4 image_to_tensor(const ImageBuffer& img) {
    if (img.channels != 1) throw InvalidArgument("tensor conversion expects 1-channel images");
    Tensor4 t = Tensor4::zeros(1, 1, img.height, img.width);
    t.v = img.data;
    return t;
}

inline ImageBuffer tensor_to_image(const Tensor4& t, int b = 0, int ch = 0) {
    ImageBuffer img = make_image(t.w, t.h, 1);
    std::memcpy(img.data.data(), t.plane_ptr(b, ch), t.plane() * sizeof(double));
    return img;
}

/// 3x3 convolution layer, stride 1, zero padding 1 (shape preserving),
/// with optional batchnorm and ReLU applied after the convolution.
struct ConvLayer {
    int in_ch = 0;
    int out_ch = 0;
    std::vector<double> weights; // (out, in, 3, 3)
    std::vector<double> bias;    // (out)
    bool has_batchnorm = false;
    bool has_relu = false;
    // batchnorm parameters and running statistics (per output channel)
    std::vector<double> bn_gamma, bn_beta, bn_running_mean, bn_running_var;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
};

/// Parameters are stored as doubles but kept exactly representable in
/// 32-bit floats (applied after init and after every optimizer step) so
/// checkpoints round-trip bit-exactly.
inline double to_f32(double x) { return double(float(x)); }

inline ConvLayer make_conv_layer(int in_ch, int out_ch, bool batchnorm, bool relu, Rng& rng) {
    ConvLayer l;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.has_batchnorm = batchnorm;
    l.has_relu = relu;
    l.weights.resize(std::size_t(out_ch) * in_ch * 9);
    l.bias.assign(out_ch, 0.0);
    // Kaiming fan-in scaling for ReLU stacks.
    const double std_dev = std::sqrt(2.0 / (9.0 * in_ch));
    for (double& w : l.weights) w = to_f32(rng.normal(0.0, std_dev));
    if (batchnorm) {
        l.bn_gamma.assign(out_ch, 1.0);
        l.bn_beta.assign(out_ch, 0.0);
        l.bn_running_mean.assign(out_ch, 0.0);
        l.bn_running_var.assign(out_ch, 1.0);
    }
    return l;
}

namespace nn {

inline void conv3x3_forward(const ConvLayer& l, const Tensor4& x, Tensor4& out) {
    if (x.c != l.in_ch) throw DimensionMismatch("conv input channel mismatch");
    if (out.n != x.n || out.c != l.out_ch || out.h != x.h || out.w != x.w)
        out = Tensor4::zeros(x.n, l.out_ch, x.h, x.w);
    const int H = x.h, W = x.w;
    for (int b = 0; b < x.n; ++b) {
        for (int oc = 0; oc < l.out_ch; ++oc) {
            double* op = out.plane_ptr(b, oc);
            const double bv = l.bias[oc];
            for (std::size_t i = 0; i < out.plane(); ++i) op[i] = bv;
            for (int ic = 0; ic < l.in_ch; ++ic) {
                const double* ip = x.plane_ptr(b, ic);
                const double* wk = &l.weights[(std::size_t(oc) * l.in_ch + ic) * 9];
                for (int ky = -1; ky <= 1; ++ky) {
                    const int y0 = ky < 0 ? 1 : 0;
                    const int y1 = ky > 0 ? H - 1 : H;
                    for (int kx = -1; kx <= 1; ++kx) {
                        const double wv = wk[(ky + 1) * 3 + (kx + 1)];
                        const int x0 = kx < 0 ? 1 : 0;
                        const int x1 = kx > 0 ? W - 1 : W;
                        for (int y = y0; y < y1; ++y) {
                            const double* irow = ip + std::size_t(y + ky) * W + kx;
                            double* orow = op + std::size_t(y) * W;
                            for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
                        }
                    }
                }
            }
        }
    }
}

struct ConvGrads {
    std::vector<double> d_weights, d_bias, d_gamma, d_beta;
};

/// Backward through the convolution alone: accumulates weight/bias grads
/// and writes the input gradient.
inline void conv3x3_backward(const ConvLayer& l, const Tensor4& x, const Tensor4& d_out,
                             Tensor4& d_in, ConvGrads& g) {
    d_in = Tensor4::zeros(x.n, x.c, x.h, x.w);
    g.d_weights.assign(l.weights.size(), 0.0);
    g.d_bias.assign(l.bias.size(), 0.0);
    const int H = x.h, W = x.w;
    for (int b = 0; b < x.n; ++b) {
        for (int oc = 0; oc < l.out_ch; ++oc) {
            const double* dop = d_out.plane_ptr(b, oc);
            double bsum = 0.0;
            for (std::size_t i = 0; i < d_out.plane(); ++i) bsum += dop[i];
            g.d_bias[oc] += bsum;
            for (int ic = 0; ic < l.in_ch; ++ic) {
                const double* ip = x.plane_ptr(b, ic);
                double* dip = d_in.plane_ptr(b, ic);
                double* dwk = &g.d_weights[(std::size_t(oc) * l.in_ch + ic) * 9];
                const double* wk = &l.weights[(std::size_t(oc) * l.in_ch + ic) * 9];
                for (int ky = -1; ky <= 1; ++ky) {
                    const int y0 = ky < 0 ? 1 : 0;
                    const int y1 = ky > 0 ? H - 1 : H;
                    for (int kx = -1; kx <= 1; ++kx) {
                        const double wv = wk[(ky + 1) * 3 + (kx + 1)];
                        const int x0 = kx < 0 ? 1 : 0;
                        const int x1 = kx > 0 ? W - 1 : W;
                        double wsum = 0.0;
                        for (int y = y0; y < y1; ++y) {
                            const double* irow = ip + std::size_t(y + ky) * W + kx;
                            double* dirow = dip + std::size_t(y + ky) * W + kx;
                            const double* dorow = dop + std::size_t(y) * W;
                            for (int xx = x0; xx < x1; ++xx) {
                                wsum += dorow[xx] * irow[xx];
                                dirow[xx] += wv * dorow[xx];
                            }
                        }
                        dwk[(ky + 1) * 3 + (kx + 1)] += wsum;
                    }
                }
            }
        }
    }
}

struct BnCache {
    std::vector<double> mean, ivar; // per channel
    Tensor4 xhat;
};

/// Batchnorm forward. Training mode normalizes with batch statistics over
/// (N, H, W) per channel (and optionally folds them into the running
/// averages); inference mode uses the running statistics.
inline void batchnorm_forward(ConvLayer& l, Tensor4& t, bool training, bool update_running,
                              BnCache* cache) {
    const std::size_t plane = t.plane();
    const double cnt = double(t.n) * double(plane);
    if (cache) {
        cache->mean.assign(t.c, 0.0);
        cache->ivar.assign(t.c, 0.0);
        cache->xhat = Tensor4::zeros(t.n, t.c, t.h, t.w);
    }
    for (int ch = 0; ch < t.c; ++ch) {
        double mean, ivar;
        if (training) {
            double s = 0.0;
            for (int b = 0; b < t.n; ++b) {
                const double* p = t.plane_ptr(b, ch);
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            mean = s / cnt;
            double vs = 0.0;
            for (int b = 0; b < t.n; ++b) {
                const double* p = t.plane_ptr(b, ch);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    vs += d * d;
                }
            }
            const double var = vs / cnt;
            ivar = 1.0 / std::sqrt(var + l.bn_eps);
            if (update_running) {
                // kept f32-representable, like the trainable parameters,
                // so checkpoints round-trip exactly
                l.bn_running_mean[ch] =
                    to_f32((1.0 - l.bn_momentum) * l.bn_running_mean[ch] + l.bn_momentum * mean);
                l.bn_running_var[ch] =
                    to_f32((1.0 - l.bn_momentum) * l.bn_running_var[ch] + l.bn_momentum * var);
            }
        } else {
            mean = l.bn_running_mean[ch];
            ivar = 1.0 / std::sqrt(l.bn_running_var[ch] + l.bn_eps);
        }
        const double g = l.bn_gamma[ch], be = l.bn_beta[ch];
        for (int b = 0; b < t.n; ++b) {
            double* p = t.plane_ptr(b, ch);
            double* xh = cache ? cache->xhat.plane_ptr(b, ch) : nullptr;
            for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (p[i] - mean) * ivar;
                if (xh) xh[i] = xhat;
                p[i] = g * xhat + be;
            }
        }
        if (cache) {
            cache->mean[ch] = mean;
            cache->ivar[ch] = ivar;
        }
    }
}

/// Backward through training-mode batchnorm (gradients flow through the
/// batch statistics). d_t is rewritten in place from dL/dy to dL/dx.
inline void batchnorm_backward(const ConvLayer& l, const BnCache& cache, Tensor4& d_t, ConvGrads& g) {
    const std::size_t plane = d_t.plane();
    const double cnt = double(d_t.n) * double(plane);
    g.d_gamma.assign(d_t.c, 0.0);
    g.d_beta.assign(d_t.c, 0.0);
    for (int ch = 0; ch < d_t.c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < d_t.n; ++b) {
            const double* dy = d_t.plane_ptr(b, ch);
            const double* xh = cache.xhat.plane_ptr(b, ch);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xh[i];
            }
        }
        g.d_gamma[ch] = sum_dy_xhat;
        g.d_beta[ch] = sum_dy;
        const double gamma = l.bn_gamma[ch];
        const double ivar = cache.ivar[ch];
        const double mean_dy = sum_dy / cnt;
        const double mean_dy_xhat = sum_dy_xhat / cnt;
        for (int b = 0; b < d_t.n; ++b) {
            double* dy = d_t.plane_ptr(b, ch);
            const double* xh = cache.xhat.plane_ptr(b, ch);
            for (std::size_t i = 0; i < plane; ++i)
                dy[i] = gamma * ivar * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
    }
}

inline void relu_forward(Tensor4& t) {
    for (double& x : t.v)
        if (x < 0.0) x = 0.0;
}

/// ReLU backward from the stored post-activation output.
inline void relu_backward(const Tensor4& out, Tensor4& d_t) {
    for (std::size_t i = 0; i < d_t.v.size(); ++i)
        if (out.v[i] <= 0.0) d_t.v[i] = 0.0;
}

struct PoolCache {
    std::vector<std::int32_t> argmax; // flat input-plane index per output cell
    int in_h = 0, in_w = 0;
};

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
inline Tensor4 maxpool2x2_forward(const Tensor4& x, PoolCache* cache) {
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor4 out = Tensor4::zeros(x.n, x.c, oh, ow);
    if (cache) {
        cache->argmax.assign(out.size(), 0);
        cache->in_h = x.h;
        cache->in_w = x.w;
    }
    std::size_t oi = 0;
    for (int b = 0; b < x.n; ++b)
        for (int ch = 0; ch < x.c; ++ch) {
            const double* ip = x.plane_ptr(b, ch);
            double* op = out.plane_ptr(b, ch);
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const int iy = 2 * y, ix = 2 * xx;
                    int best = iy * x.w + ix;
                    double bv = ip[best];
                    const int cand[3] = {iy * x.w + ix + 1, (iy + 1) * x.w + ix, (iy + 1) * x.w + ix + 1};
                    for (int k = 0; k < 3; ++k)
                        if (ip[cand[k]] > bv) {
                            bv = ip[cand[k]];
                            best = cand[k];
                        }
                    op[std::size_t(y) * ow + xx] = bv;
                    if (cache) cache->argmax[oi] = best;
                    ++oi;
                }
        }
    return out;
}

inline Tensor4 maxpool2x2_backward(const Tensor4& d_out, const PoolCache& cache, int in_c) {
    Tensor4 d_in = Tensor4::zeros(d_out.n, in_c, cache.in_h, cache.in_w);
    std::size_t oi = 0;
    for (int b = 0; b < d_out.n; ++b)
        for (int ch = 0; ch < d_out.c; ++ch) {
            double* dip = d_in.plane_ptr(b, ch);
            const double* dop = d_out.plane_ptr(b, ch);
            for (std::size_t i = 0; i < d_out.plane(); ++i) {
                dip[cache.argmax[oi]] += dop[i];
                ++oi;
            }
        }
    return d_in;
}

} // namespace nn

/// Adam optimizer over a flat list of parameter blocks.
struct ParamBlock {
    double* p = nullptr;
    std::size_t n = 0;
};

using GradSet = std::vector<std::vector<double>>;

struct AdamState {
    std::vector<std::vector<double>> m, v;

    static AdamState init(const std::vector<ParamBlock>& blocks) {
        AdamState s;
        for (const ParamBlock& b : blocks) {
            s.m.emplace_back(b.n, 0.0);
            s.v.emplace_back(b.n, 0.0);
        }
        return s;
    }
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam update at step index t (t >= 1). Updated parameters
/// are re-quantized to f32 so model state stays checkpoint-exact.
inline void adam_step(const std::vector<ParamBlock>& blocks, const GradSet& grads, AdamState& state,
                      const AdamConfig& cfg, long t) {
    if (t < 1) throw InvalidArgument("Adam step index must be >= 1");
    if (grads.size() != blocks.size() || state.m.size() != blocks.size())
        throw DimensionMismatch("Adam state/gradient layout mismatch");
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (grads[i].size() != blocks[i].n) throw DimensionMismatch("Adam gradient block mismatch");
        double* p = blocks[i].p;
        const double* g = grads[i].data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        for (std::size_t j = 0; j < blocks[i].n; ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] = to_f32(p[j] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
    }
}

} // namespace ppx
