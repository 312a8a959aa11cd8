#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "ppx/dncnn.hpp"
#include "ppx/errors.hpp"
#include "ppx/image.hpp"
#include "ppx/rng.hpp"
#include "ppx/tensor.hpp"

namespace ppx {

/// Compact convolutional binary classifier: three conv+batchnorm+ReLU
/// stages with 2x2 max-pooling (widths w, 2w, 4w), global average
/// pooling, and a linear map to a single logit. Accepts any input of at
/// least 32x32.
struct CompactClassifier {
    int base_width = 8;
    std::vector<ConvLayer> stages; // conv+bn+relu layers
    std::vector<double> fc_w;      // (4w)
    double fc_b = 0.0;
};

inline CompactClassifier make_classifier(int base_width = 8, std::uint64_t seed = 0,
                                         int n_stages = 3) {
    if (base_width < 1) throw InvalidArgument("classifier width must be >= 1");
    if (n_stages < 1 || n_stages > 5) throw InvalidArgument("classifier stages must be in [1, 5]");
    Rng rng(seed);
    CompactClassifier c;
    c.base_width = base_width;
    int in_ch = 1;
    int w = base_width;
    for (int s = 0; s < n_stages; ++s) {
        c.stages.push_back(make_conv_layer(in_ch, w, true, true, rng));
        in_ch = w;
        w *= 2;
    }
    c.fc_w.resize(in_ch);
    const double std_dev = std::sqrt(1.0 / in_ch);
    for (double& v : c.fc_w) v = to_f32(rng.normal(0.0, std_dev));
    c.fc_b = 0.0;
    return c;
}

inline std::vector<ParamBlock> trainable_params(CompactClassifier& c) {
    std::vector<ParamBlock> blocks;
    for (ConvLayer& l : c.stages) {
        blocks.push_back({l.weights.data(), l.weights.size()});
        blocks.push_back({l.bias.data(), l.bias.size()});
        blocks.push_back({l.bn_gamma.data(), l.bn_gamma.size()});
        blocks.push_back({l.bn_beta.data(), l.bn_beta.size()});
    }
    blocks.push_back({c.fc_w.data(), c.fc_w.size()});
    blocks.push_back({&c.fc_b, 1});
    return blocks;
}

namespace detail {

struct ClassifierCache {
    std::vector<Tensor4> stage_in;   // input to each stage
    std::vector<Tensor4> conv_out;   // post conv+bn+relu
    std::vector<nn::BnCache> bn;
    std::vector<nn::PoolCache> pool;
    Tensor4 pooled_last;             // input to GAP
    std::vector<double> gap;         // (B * C)
};

// training selects batch statistics in the batchnorm layers;
// update_running additionally folds them into the running averages.
inline std::vector<double> classifier_logits(const CompactClassifier& c, const Tensor4& x,
                                             ClassifierCache* cache, bool training = false,
                                             bool update_running = false) {
    Tensor4 cur = x;
    if (cache) {
        cache->stage_in.clear();
        cache->conv_out.clear();
        cache->bn.resize(c.stages.size());
        cache->pool.resize(c.stages.size());
    }
    for (std::size_t s = 0; s < c.stages.size(); ++s) {
        if (cur.h < 2 || cur.w < 2) throw DimensionMismatch("classifier input too small");
        if (cache) cache->stage_in.push_back(cur);
        Tensor4 z;
        nn::conv3x3_forward(c.stages[s], cur, z);
        nn::batchnorm_forward(const_cast<ConvLayer&>(c.stages[s]), z, training, update_running,
                              cache ? &cache->bn[s] : nullptr);
        nn::relu_forward(z);
        PPX_CHECK_FINITE(z);
        if (cache) cache->conv_out.push_back(z);
        cur = nn::maxpool2x2_forward(z, cache ? &cache->pool[s] : nullptr);
    }
    if (cache) cache->pooled_last = cur;

    const int B = cur.n, C = cur.c;
    const double inv_plane = 1.0 / double(cur.plane());
    std::vector<double> gap(std::size_t(B) * C, 0.0);
    for (int b = 0; b < B; ++b)
        for (int ch = 0; ch < C; ++ch) {
            const double* p = cur.plane_ptr(b, ch);
            double s = 0.0;
            for (std::size_t i = 0; i < cur.plane(); ++i) s += p[i];
            gap[std::size_t(b) * C + ch] = s * inv_plane;
        }
    if (cache) cache->gap = gap;

    std::vector<double> logits(B, 0.0);
    for (int b = 0; b < B; ++b) {
        double z = c.fc_b;
        for (int ch = 0; ch < C; ++ch) z += c.fc_w[ch] * gap[std::size_t(b) * C + ch];
        logits[b] = z;
    }
    return logits;
}

inline double stable_softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

} // namespace detail

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One probability per image, order preserving.
inline std::vector<double> predict_scores(const CompactClassifier& c,
                                          const std::vector<ImageBuffer>& images) {
    if (images.empty()) throw InvalidArgument("predict_scores needs at least one image");
    std::vector<double> out;
    out.reserve(images.size());
    for (const ImageBuffer& img : images) {
        const Tensor4 t = image_to_tensor(img);
        const std::vector<double> z = detail::classifier_logits(c, t, nullptr);
        out.push_back(logistic(z[0]));
    }
    return out;
}

/// Mean binary cross-entropy of the batch in training mode (batch
/// statistics, no running-average side effects); evaluated through the
/// logits for numerical stability. The finite-difference oracle targets
/// this.
inline double classifier_loss(const CompactClassifier& c, const Tensor4& x,
                              const std::vector<int>& labels) {
    const std::vector<double> z = detail::classifier_logits(c, x, nullptr, true, false);
    double loss = 0.0;
    for (std::size_t b = 0; b < z.size(); ++b)
        loss += detail::stable_softplus(z[b]) - double(labels[b]) * z[b];
    return loss / double(z.size());
}

inline double classifier_loss_and_gradients(CompactClassifier& c, const Tensor4& x,
                                            const std::vector<int>& labels, GradSet& grads) {
    if (int(labels.size()) != x.n) throw DimensionMismatch("label count must match batch size");
    detail::ClassifierCache cache;
    const std::vector<double> z = detail::classifier_logits(c, x, &cache, true, true);

    const int B = x.n;
    const int C = int(c.fc_w.size());
    double loss = 0.0;
    std::vector<double> dz(B);
    for (int b = 0; b < B; ++b) {
        loss += detail::stable_softplus(z[std::size_t(b)]) - double(labels[std::size_t(b)]) * z[std::size_t(b)];
        dz[std::size_t(b)] = (logistic(z[std::size_t(b)]) - double(labels[std::size_t(b)])) / double(B);
    }
    loss /= double(B);

    std::vector<double> d_fc_w(C, 0.0);
    double d_fc_b = 0.0;
    const Tensor4& pooled = cache.pooled_last;
    Tensor4 d_pooled = Tensor4::zeros(pooled.n, pooled.c, pooled.h, pooled.w);
    const double inv_plane = 1.0 / double(pooled.plane());
    for (int b = 0; b < B; ++b) {
        d_fc_b += dz[std::size_t(b)];
        for (int ch = 0; ch < C; ++ch) {
            d_fc_w[std::size_t(ch)] += dz[std::size_t(b)] * cache.gap[std::size_t(b) * C + ch];
            const double dgap = dz[std::size_t(b)] * c.fc_w[std::size_t(ch)];
            double* dp = d_pooled.plane_ptr(b, ch);
            for (std::size_t i = 0; i < pooled.plane(); ++i) dp[i] += dgap * inv_plane;
        }
    }

    std::vector<nn::ConvGrads> stage_grads(c.stages.size());
    Tensor4 d_cur = std::move(d_pooled);
    for (int s = int(c.stages.size()) - 1; s >= 0; --s) {
        Tensor4 d_conv = nn::maxpool2x2_backward(d_cur, cache.pool[std::size_t(s)],
                                                 cache.conv_out[std::size_t(s)].c);
        nn::relu_backward(cache.conv_out[std::size_t(s)], d_conv);
        nn::batchnorm_backward(c.stages[std::size_t(s)], cache.bn[std::size_t(s)], d_conv,
                               stage_grads[std::size_t(s)]);
        Tensor4 d_in;
        nn::conv3x3_backward(c.stages[std::size_t(s)], cache.stage_in[std::size_t(s)], d_conv, d_in,
                             stage_grads[std::size_t(s)]);
        d_cur = std::move(d_in);
    }

    grads.clear();
    for (std::size_t s = 0; s < c.stages.size(); ++s) {
        grads.push_back(std::move(stage_grads[s].d_weights));
        grads.push_back(std::move(stage_grads[s].d_bias));
        grads.push_back(std::move(stage_grads[s].d_gamma));
        grads.push_back(std::move(stage_grads[s].d_beta));
    }
    grads.push_back(std::move(d_fc_w));
    grads.push_back({d_fc_b});
    return loss;
}

// ---------------------------------------------------------------------------
// Labeled data and augmentation

/// Binary task: label 0 = benign, 1 = malignant. ids identify provenance
/// (used to keep the restorer's training data disjoint from evaluation
/// data).
struct LabeledDataset {
    std::vector<ImageBuffer> images;
    std::vector<int> labels;
    std::vector<std::string> ids;

    double class_ratio() const {
        if (labels.empty()) return 0.0;
        const double benign = double(std::count(labels.begin(), labels.end(), 0));
        return benign / double(labels.size());
    }

    void validate() const {
        if (images.size() != labels.size() || images.size() != ids.size())
            throw DimensionMismatch("dataset images/labels/ids lengths differ");
    }
};

/// Synthetic speckled lesion task. Every image holds one darkened
/// elliptical region on a textured background; benign lesions have smooth
/// boundaries and low eccentricity, malignant ones have perturbed
/// (spiculated) boundaries and higher eccentricity. Deterministic in seed.
inline LabeledDataset synth_lesion_dataset(int n_benign, int n_malignant, int image_size,
                                           std::uint64_t seed) {
    if (n_benign < 0 || n_malignant < 0) throw InvalidArgument("counts must be >= 0");
    if ((n_benign + n_malignant) > 0 && image_size < 32)
        throw InvalidArgument("image_size must be >= 32");
    Rng rng(seed);
    LabeledDataset ds;
    const int total = n_benign + n_malignant;
    ds.images.reserve(total);
    ds.labels.reserve(total);
    ds.ids.reserve(total);

    const int S = image_size;
    for (int idx = 0; idx < total; ++idx) {
        const int label = idx < n_benign ? 0 : 1;

        ImageBuffer img = make_image(S, S, 1);
        const double base = rng.uniform(0.40, 0.62);
        // correlated speckle: blurred white noise
        for (double& v : img.data) v = rng.uniform(-1.0, 1.0);
        detail::gaussian_blur_inplace(img, rng.uniform(1.5, 2.2));
        const double tex_amp = rng.uniform(0.09, 0.15);
        {
            double mn = img.data[0], mx = img.data[0];
            for (double v : img.data) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            const double scale = mx > mn ? 2.0 / (mx - mn) : 0.0;
            for (double& v : img.data) v = base + tex_amp * ((v - mn) * scale - 1.0);
        }
        // gentle illumination gradient
        const double gx = rng.uniform(-0.06, 0.06), gy = rng.uniform(-0.06, 0.06);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                img.at(y, x) += gx * (double(x) / (S - 1) - 0.5) + gy * (double(y) / (S - 1) - 0.5);

        // lesion geometry
        const double cx = S * rng.uniform(0.38, 0.62);
        const double cy = S * rng.uniform(0.38, 0.62);
        const double r0 = S * rng.uniform(0.14, 0.22);
        const double ecc = label == 0 ? rng.uniform(0.05, 0.40) : rng.uniform(0.45, 0.85);
        const double a = r0 * (1.0 + ecc);
        const double b = r0 / (1.0 + ecc);
        const double psi = rng.uniform(0.0, 3.14159265358979323846);
        const double rough = label == 0 ? rng.uniform(0.0, 0.03) : rng.uniform(0.12, 0.26);
        const double depth = rng.uniform(0.40, 0.60);

        double amp[5], phase[5];
        const int harmonics[5] = {5, 7, 9, 12, 15};
        for (int k = 0; k < 5; ++k) {
            amp[k] = rough * rng.uniform(0.5, 1.0);
            phase[k] = rng.uniform(0.0, 6.28318530717958647692);
        }

        const double cpsi = std::cos(psi), spsi = std::sin(psi);
        const double edge = 1.3; // px, boundary softness
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double qx = (cpsi * dx + spsi * dy) / a;
                const double qy = (-spsi * dx + cpsi * dy) / b;
                const double rho = std::sqrt(qx * qx + qy * qy);
                const double theta = std::atan2(qy, qx);
                double boundary = 1.0;
                for (int k = 0; k < 5; ++k) boundary += amp[k] * std::sin(harmonics[k] * theta + phase[k]);
                const double sd = (rho - boundary) * r0; // approx px distance
                const double inside = 1.0 / (1.0 + std::exp(sd / edge));
                img.at(y, x) *= 1.0 - depth * inside;
            }

        clamp_image(img);
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
        ds.ids.push_back("synth/" + std::to_string(seed) + "/" + std::to_string(idx));
    }
    return ds;
}

/// Randomized label-preserving augmentation: horizontal flip, small
/// rotation, brightness shift.
struct AugmentConfig {
    double hflip_prob = 0.5;
    double max_rotation = 10.0;      // degrees
    double brightness_jitter = 0.1;  // intensity
    std::uint64_t seed = 0;

    void validate() const {
        if (hflip_prob < 0.0 || hflip_prob > 1.0) throw ConfigError("hflip_prob must be in [0,1]");
        if (max_rotation < 0.0 || brightness_jitter < 0.0)
            throw ConfigError("augmentation magnitudes must be >= 0");
    }
};

struct AugmentDraw {
    bool flip = false;
    double angle_deg = 0.0;
    double brightness = 0.0;
};

inline AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng) {
    AugmentDraw d;
    d.flip = rng.uniform() < cfg.hflip_prob;
    d.angle_deg = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
    d.brightness = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter);
    return d;
}

inline ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& cfg, const AugmentDraw& draw) {
    cfg.validate();
    if (img.channels != 1) throw InvalidArgument("augment expects 1-channel images");
    ImageBuffer out = img;
    if (draw.flip) {
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, img.width - 1 - x);
    }
    if (draw.angle_deg != 0.0) {
        const double rad = draw.angle_deg * 3.14159265358979323846 / 180.0;
        const double cr = std::cos(rad), sr = std::sin(rad);
        const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
        ImageBuffer rotated = make_image(img.width, img.height, 1);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const double dx = x - cx, dy = y - cy;
                // inverse rotation, bilinear with edge clamp
                const double sx = cx + cr * dx + sr * dy;
                const double sy = cy - sr * dx + cr * dy;
                rotated.at(y, x) = sample_bilinear(out, sx, sy);
            }
        out = std::move(rotated);
    }
    if (draw.brightness != 0.0)
        for (double& v : out.data) v += draw.brightness;
    clamp_image(out);
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

// AUROC by rank sum with average ranks for ties; exact for the tie credit
// of 0.5 per tied pair. Duplicated in eval.hpp's public auroc with full
// validation; this internal copy avoids a circular include.
inline double rank_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j); // mean of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]] == 1) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw InvalidArgument("AUROC needs both classes present");
    return (rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0) / (double(n_pos) * double(n_neg));
}

} // namespace detail

/// Cross-entropy training with Adam and randomized augmentation. The
/// validation AUROC is recorded after every epoch and the parameter
/// snapshot with the best validation AUROC is returned (early selection).
/// Takes clean image sets only; degraded or restored variants belong to
/// evaluation, never to training.
inline CompactClassifier train_classifier(const LabeledDataset& train, const LabeledDataset& valid,
                                          const TrainConfig& cfg, const AugmentConfig& aug,
                                          std::vector<double>* valid_auroc_history = nullptr,
                                          int base_width = 8) {
    cfg.validate();
    aug.validate();
    train.validate();
    valid.validate();
    if (train.images.empty()) throw InvalidArgument("training split is empty");
    if (valid.images.empty()) throw InvalidArgument("validation split is empty");
    const bool valid_has_both =
        std::count(valid.labels.begin(), valid.labels.end(), 1) > 0 &&
        std::count(valid.labels.begin(), valid.labels.end(), 0) > 0;
    if (!valid_has_both) throw InvalidArgument("validation split must contain both classes");

    CompactClassifier model = make_classifier(base_width, cfg.seed);
    std::vector<ParamBlock> blocks = trainable_params(model);
    AdamState state = AdamState::init(blocks);
    Rng rng(cfg.seed + 0x51a2b3c4d5e6f708ull);

    CompactClassifier best = model;
    double best_auroc = -1.0;

    std::vector<std::size_t> order(train.images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long t = 0;
    GradSet grads;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t bs = std::min(std::size_t(cfg.batch_size), order.size() - start);
            const ImageBuffer& first = train.images[order[start]];
            Tensor4 batch = Tensor4::zeros(int(bs), 1, first.height, first.width);
            std::vector<int> labels(bs);
            for (std::size_t k = 0; k < bs; ++k) {
                const std::size_t idx = order[start + k];
                const ImageBuffer a = augment(train.images[idx], aug, draw_augment(aug, rng));
                if (a.height != batch.h || a.width != batch.w)
                    throw DimensionMismatch("classifier training images must share dimensions");
                std::memcpy(batch.plane_ptr(int(k), 0), a.data.data(), batch.plane() * sizeof(double));
                labels[k] = train.labels[idx];
            }
            const double loss = classifier_loss_and_gradients(model, batch, labels, grads);
            if (!std::isfinite(loss)) throw NumericalError("classifier training diverged");
            adam_step(blocks, grads, state, cfg.adam(), ++t);
        }
        const double va = detail::rank_auroc(predict_scores(model, valid.images), valid.labels);
        if (valid_auroc_history) valid_auroc_history->push_back(va);
        if (va > best_auroc) {
            best_auroc = va;
            best = model;
        }
    }
    return cfg.epochs > 0 ? best : model;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian), same family as the restorer but with
// its own magic: "PPCL" | u32 version=1 | u32 base_width | u32 n_stages,
// then per stage f32 weights, bias, gamma, beta, running mean and running
// var, then fc weights and fc bias.

inline void save_checkpoint(const CompactClassifier& c, const std::filesystem::path& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'P', 'P', 'C', 'L'});
    detail::put_u32(buf, 1);
    detail::put_u32(buf, std::uint32_t(c.base_width));
    detail::put_u32(buf, std::uint32_t(c.stages.size()));
    for (const ConvLayer& l : c.stages) {
        for (double v : l.weights) detail::put_f32(buf, v);
        for (double v : l.bias) detail::put_f32(buf, v);
        for (double v : l.bn_gamma) detail::put_f32(buf, v);
        for (double v : l.bn_beta) detail::put_f32(buf, v);
        for (double v : l.bn_running_mean) detail::put_f32(buf, v);
        for (double v : l.bn_running_var) detail::put_f32(buf, v);
    }
    for (double v : c.fc_w) detail::put_f32(buf, v);
    detail::put_f32(buf, c.fc_b);
    detail::write_file_bytes(path, buf);
}

inline CompactClassifier load_classifier_checkpoint(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> buf = detail::read_file_bytes(path);
    if (buf.size() < 4 || std::memcmp(buf.data(), "PPCL", 4) != 0)
        throw CheckpointError("bad checkpoint magic (expected PPCL): " + path.string());
    detail::ByteReader r{buf.data(), buf.size()};
    r.pos = 4;
    if (r.u32() != 1) throw CheckpointError("unsupported checkpoint version");
    const int base_width = int(r.u32());
    const int n_stages = int(r.u32());
    if (base_width < 1 || base_width > 4096 || n_stages < 1 || n_stages > 5)
        throw CheckpointError("corrupt checkpoint header");
    CompactClassifier c = make_classifier(base_width, 0, n_stages);
    for (ConvLayer& l : c.stages) {
        for (double& v : l.weights) v = r.f32();
        for (double& v : l.bias) v = r.f32();
        for (double& v : l.bn_gamma) v = r.f32();
        for (double& v : l.bn_beta) v = r.f32();
        for (double& v : l.bn_running_mean) v = r.f32();
        for (double& v : l.bn_running_var) v = r.f32();
    }
    for (double& v : c.fc_w) v = r.f32();
    c.fc_b = r.f32();
    r.expect_end();
    return c;
}

} // namespace ppx

