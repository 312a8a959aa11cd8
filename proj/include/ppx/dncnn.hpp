#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "ppx/degrade.hpp"
#include "ppx/errors.hpp"
#include "ppx/image.hpp"
#include "ppx/rng.hpp"
#include "ppx/tensor.hpp"

namespace ppx {

/// Residual denoiser: a stack of shape-preserving 3x3 conv layers that
/// predicts the defect residual (photo - clean), subtracted from the input
/// at restore time. First layer conv+ReLU, middle layers
/// conv+batchnorm+ReLU, final layer a plain conv back to one channel.
struct DnCnnModel {
    int depth = 8;
    int width = 48;
    std::vector<ConvLayer> layers;
};

inline DnCnnModel make_dncnn(int depth = 8, int width = 48, std::uint64_t seed = 0) {
    if (depth < 2) throw InvalidArgument("DnCNN depth must be >= 2");
    if (width < 1) throw InvalidArgument("DnCNN width must be >= 1");
    Rng rng(seed);
    DnCnnModel m;
    m.depth = depth;
    m.width = width;
    m.layers.push_back(make_conv_layer(1, width, false, true, rng));
    for (int i = 1; i < depth - 1; ++i) m.layers.push_back(make_conv_layer(width, width, true, true, rng));
    m.layers.push_back(make_conv_layer(width, 1, false, false, rng));
    return m;
}

inline DnCnnModel make_zero_dncnn(int depth = 8, int width = 48) {
    DnCnnModel m = make_dncnn(depth, width, 0);
    for (ConvLayer& l : m.layers) {
        std::fill(l.weights.begin(), l.weights.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
        std::fill(l.bn_beta.begin(), l.bn_beta.end(), 0.0);
        // keep bn gamma/running stats at their init values; the final
        // zero conv makes the residual identically zero regardless.
    }
    return m;
}

/// Trainable parameter blocks in checkpoint order: per layer weights,
/// bias, then batchnorm gamma and beta when present. Running statistics
/// are state, not parameters, and are excluded here.
inline std::vector<ParamBlock> trainable_params(DnCnnModel& m) {
    std::vector<ParamBlock> blocks;
    for (ConvLayer& l : m.layers) {
        blocks.push_back({l.weights.data(), l.weights.size()});
        blocks.push_back({l.bias.data(), l.bias.size()});
        if (l.has_batchnorm) {
            blocks.push_back({l.bn_gamma.data(), l.bn_gamma.size()});
            blocks.push_back({l.bn_beta.data(), l.bn_beta.size()});
        }
    }
    return blocks;
}

namespace detail {

struct DnCnnLayerCache {
    Tensor4 out; // post conv(+bn)(+relu): input to the next layer
    nn::BnCache bn;
};

// Forward with optional caches. training selects batch statistics;
// update_running folds batch stats into the running averages.
inline Tensor4 dncnn_forward_impl(DnCnnModel& m, const Tensor4& x, bool training, bool update_running,
                                  std::vector<DnCnnLayerCache>* caches) {
    if (x.c != 1) throw DimensionMismatch("DnCNN expects 1-channel input");
    Tensor4 cur = x;
    if (caches) caches->resize(m.layers.size());
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        ConvLayer& l = m.layers[i];
        Tensor4 out;
        nn::conv3x3_forward(l, cur, out);
        if (l.has_batchnorm)
            nn::batchnorm_forward(l, out, training, update_running,
                                  caches ? &(*caches)[i].bn : nullptr);
        if (l.has_relu) nn::relu_forward(out);
        PPX_CHECK_FINITE(out);
        if (caches) (*caches)[i].out = out;
        cur = std::move(out);
    }
    return cur;
}

} // namespace detail

/// Predicted residual for the given input batch. training=true uses batch
/// statistics in the batchnorm layers and updates their running averages;
/// training=false is the pure inference path.
inline Tensor4 forward(DnCnnModel& m, const Tensor4& x, bool training) {
    return detail::dncnn_forward_impl(m, x, training, training, nullptr);
}

inline Tensor4 forward_infer(const DnCnnModel& m, const Tensor4& x) {
    return detail::dncnn_forward_impl(const_cast<DnCnnModel&>(m), x, false, false, nullptr);
}

/// Training-mode loss without side effects; the finite-difference oracle
/// evaluates exactly this function.
inline double dncnn_loss(const DnCnnModel& m, const Tensor4& photo, const Tensor4& clean) {
    if (!photo.same_shape(clean)) throw DimensionMismatch("photo/clean batch shapes differ");
    Tensor4 residual =
        detail::dncnn_forward_impl(const_cast<DnCnnModel&>(m), photo, true, false, nullptr);
    double sum = 0.0;
    for (std::size_t i = 0; i < residual.size(); ++i) {
        const double d = photo.v[i] - residual.v[i] - clean.v[i];
        sum += d * d;
    }
    return sum / double(residual.size());
}

/// MSE loss between restored (pre-clamp) and clean, plus gradients for
/// every trainable block via reverse-mode differentiation. Also folds the
/// batch statistics into the batchnorm running averages, as a training
/// step should.
inline double loss_and_gradients(DnCnnModel& m, const Tensor4& photo, const Tensor4& clean,
                                 GradSet& grads) {
    if (!photo.same_shape(clean)) throw DimensionMismatch("photo/clean batch shapes differ");
    std::vector<detail::DnCnnLayerCache> caches;
    const Tensor4 residual = detail::dncnn_forward_impl(m, photo, true, true, &caches);

    // loss = mean((photo - residual - clean)^2); d loss / d residual
    const double inv_n = 1.0 / double(residual.size());
    double loss = 0.0;
    Tensor4 d_cur = Tensor4::zeros(residual.n, residual.c, residual.h, residual.w);
    for (std::size_t i = 0; i < residual.size(); ++i) {
        const double diff = photo.v[i] - residual.v[i] - clean.v[i];
        loss += diff * diff;
        d_cur.v[i] = -2.0 * inv_n * diff;
    }
    loss *= inv_n;

    std::vector<nn::ConvGrads> layer_grads(m.layers.size());
    for (int i = int(m.layers.size()) - 1; i >= 0; --i) {
        const ConvLayer& l = m.layers[std::size_t(i)];
        const Tensor4& x_in = i == 0 ? photo : caches[std::size_t(i) - 1].out;
        if (l.has_relu) nn::relu_backward(caches[std::size_t(i)].out, d_cur);
        if (l.has_batchnorm)
            nn::batchnorm_backward(l, caches[std::size_t(i)].bn, d_cur, layer_grads[std::size_t(i)]);
        Tensor4 d_in;
        nn::conv3x3_backward(l, x_in, d_cur, d_in, layer_grads[std::size_t(i)]);
        d_cur = std::move(d_in);
    }

    grads.clear();
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        grads.push_back(std::move(layer_grads[i].d_weights));
        grads.push_back(std::move(layer_grads[i].d_bias));
        if (m.layers[i].has_batchnorm) {
            grads.push_back(std::move(layer_grads[i].d_gamma));
            grads.push_back(std::move(layer_grads[i].d_beta));
        }
    }
    return loss;
}

/// Restore one image: clamp(img - predicted residual, 0, 1). Images larger
/// than the tile are processed in overlapping tiles (overlap = tile/4) and
/// the overlapping predictions are averaged across seams.
inline ImageBuffer restore(const DnCnnModel& m, const ImageBuffer& img, int tile = 48) {
    if (img.channels != 1) throw InvalidArgument("restore expects a 1-channel image");
    if (tile < 8) throw InvalidArgument("tile must be >= 8");

    const auto positions = [](int extent, int tile_len, int stride) {
        std::vector<int> pos;
        if (extent <= tile_len) {
            pos.push_back(0);
            return pos;
        }
        for (int p = 0; p + tile_len < extent; p += stride) pos.push_back(p);
        pos.push_back(extent - tile_len);
        return pos;
    };

    const int tw = std::min(tile, img.width);
    const int th = std::min(tile, img.height);
    const int overlap = tile / 4;
    const std::vector<int> xs = positions(img.width, tw, std::max(1, tw - overlap));
    const std::vector<int> ys = positions(img.height, th, std::max(1, th - overlap));

    std::vector<double> acc(img.size(), 0.0);
    std::vector<double> cnt(img.size(), 0.0);
    for (int y0 : ys)
        for (int x0 : xs) {
            Tensor4 t = Tensor4::zeros(1, 1, th, tw);
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) t.at(0, 0, y, x) = img.at(y0 + y, x0 + x);
            const Tensor4 res = forward_infer(m, t);
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) {
                    const std::size_t i = std::size_t(y0 + y) * img.width + (x0 + x);
                    acc[i] += res.at(0, 0, y, x);
                    cnt[i] += 1.0;
                }
        }

    ImageBuffer out = make_image(img.width, img.height, 1);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = clamp01(img.data[i] - acc[i] / cnt[i]);
    return out;
}

/// Restorer hyperparameters (shared with the classifier trainer).
struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int epochs = 30;
    int batch_size = 16;
    int patch_size = 48;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("Adam betas must lie in [0, 1)");
        if (epsilon <= 0.0) throw ConfigError("epsilon must be > 0");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (patch_size < 8) throw ConfigError("patch_size must be >= 8");
    }

    AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

/// Replace each photo with its rectification onto the clean geometry.
inline std::vector<DegradedPair> rectify_pairs(std::vector<DegradedPair> pairs) {
    for (DegradedPair& p : pairs)
        p.photo = rectify(p.photo, p.true_corners, p.clean.width, p.clean.height);
    return pairs;
}

struct TrainResult {
    DnCnnModel model;
    std::vector<double> epoch_loss;
};

/// Patch-based minibatch training. Pairs must already be rectified to the
/// clean geometry. Per-epoch shuffling, batching and initialization are
/// all driven by cfg.seed, so results are bit-reproducible.
inline TrainResult train_restorer(const std::vector<DegradedPair>& pairs, const TrainConfig& cfg,
                                  int depth = 8, int width = 48) {
    cfg.validate();
    if (pairs.empty()) throw InvalidArgument("training set is empty");
    for (const DegradedPair& p : pairs)
        if (!p.photo.same_shape(p.clean))
            throw DimensionMismatch("pairs must be rectified to the clean dimensions before training");

    const int patch = cfg.patch_size;
    const int stride = std::max(1, patch / 2);
    std::vector<ImageBuffer> photo_patches, clean_patches;
    for (const DegradedPair& p : pairs) {
        auto pp = extract_patches(p.photo, patch, stride);
        auto cp = extract_patches(p.clean, patch, stride);
        std::move(pp.begin(), pp.end(), std::back_inserter(photo_patches));
        std::move(cp.begin(), cp.end(), std::back_inserter(clean_patches));
    }

    TrainResult result;
    result.model = make_dncnn(depth, width, cfg.seed);
    std::vector<ParamBlock> blocks = trainable_params(result.model);
    AdamState state = AdamState::init(blocks);
    Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull);

    std::vector<std::size_t> order(photo_patches.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long t = 0;
    GradSet grads;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_sum = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t bs = std::min(std::size_t(cfg.batch_size), order.size() - start);
            Tensor4 photo_b = Tensor4::zeros(int(bs), 1, patch, patch);
            Tensor4 clean_b = Tensor4::zeros(int(bs), 1, patch, patch);
            for (std::size_t k = 0; k < bs; ++k) {
                const std::size_t idx = order[start + k];
                std::memcpy(photo_b.plane_ptr(int(k), 0), photo_patches[idx].data.data(),
                            photo_b.plane() * sizeof(double));
                std::memcpy(clean_b.plane_ptr(int(k), 0), clean_patches[idx].data.data(),
                            clean_b.plane() * sizeof(double));
            }
            const double loss = loss_and_gradients(result.model, photo_b, clean_b, grads);
            adam_step(blocks, grads, state, cfg.adam(), ++t);
            epoch_sum += loss * double(bs);
            epoch_count += bs;
        }
        const double epoch_loss = epoch_count ? epoch_sum / double(epoch_count) : 0.0;
        if (!std::isfinite(epoch_loss)) throw NumericalError("training diverged (non-finite loss)");
        result.epoch_loss.push_back(epoch_loss);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   magic "PPDN" | u32 version=1 | u32 depth | u32 width
//   then per layer, f32 values in order: weights, bias,
//   [gamma, beta, running_mean, running_var] when the layer has batchnorm.

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(std::uint8_t(v & 0xff));
    buf.push_back(std::uint8_t((v >> 8) & 0xff));
    buf.push_back(std::uint8_t((v >> 16) & 0xff));
    buf.push_back(std::uint8_t((v >> 24) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& buf, double v) {
    const float f = float(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
}

struct ByteReader {
    const std::uint8_t* p;
    std::size_t n;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > n) throw CheckpointError("truncated checkpoint file");
        const std::uint32_t v = std::uint32_t(p[pos]) | (std::uint32_t(p[pos + 1]) << 8) |
                                (std::uint32_t(p[pos + 2]) << 16) | (std::uint32_t(p[pos + 3]) << 24);
        pos += 4;
        return v;
    }

    double f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return double(f);
    }

    void expect_end() const {
        if (pos != n) throw CheckpointError("trailing bytes in checkpoint file");
    }
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    FileHandle fh(path.string(), "rb");
    if (!fh.f) throw FileNotFound("no such file: " + path.string());
    std::fseek(fh.f, 0, SEEK_END);
    const long len = std::ftell(fh.f);
    std::rewind(fh.f);
    std::vector<std::uint8_t> buf;
    buf.resize(std::size_t(len));
    if (len > 0 && std::fread(buf.data(), 1, buf.size(), fh.f) != buf.size())
        throw CorruptStream("short read: " + path.string());
    return buf;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& buf) {
    FileHandle fh(path.string(), "wb");
    if (!fh.f) throw IoError("cannot open for writing: " + path.string());
    if (!buf.empty() && std::fwrite(buf.data(), 1, buf.size(), fh.f) != buf.size())
        throw IoError("short write: " + path.string());
}

} // namespace detail

inline void save_checkpoint(const DnCnnModel& m, const std::filesystem::path& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'P', 'P', 'D', 'N'});
    detail::put_u32(buf, 1);
    detail::put_u32(buf, std::uint32_t(m.depth));
    detail::put_u32(buf, std::uint32_t(m.width));
    for (const ConvLayer& l : m.layers) {
        for (double v : l.weights) detail::put_f32(buf, v);
        for (double v : l.bias) detail::put_f32(buf, v);
        if (l.has_batchnorm) {
            for (double v : l.bn_gamma) detail::put_f32(buf, v);
            for (double v : l.bn_beta) detail::put_f32(buf, v);
            for (double v : l.bn_running_mean) detail::put_f32(buf, v);
            for (double v : l.bn_running_var) detail::put_f32(buf, v);
        }
    }
    detail::write_file_bytes(path, buf);
}

inline DnCnnModel load_checkpoint(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> buf = detail::read_file_bytes(path);
    detail::ByteReader r{buf.data(), buf.size()};
    if (buf.size() < 4 || std::memcmp(buf.data(), "PPDN", 4) != 0)
        throw CheckpointError("bad checkpoint magic (expected PPDN): " + path.string());
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != 1) throw CheckpointError("unsupported checkpoint version");
    const int depth = int(r.u32());
    const int width = int(r.u32());
    if (depth < 2 || depth > 1024 || width < 1 || width > 65536)
        throw CheckpointError("corrupt checkpoint header");
    DnCnnModel m = make_dncnn(depth, width, 0);
    for (ConvLayer& l : m.layers) {
        for (double& v : l.weights) v = r.f32();
        for (double& v : l.bias) v = r.f32();
        if (l.has_batchnorm) {
            for (double& v : l.bn_gamma) v = r.f32();
            for (double& v : l.bn_beta) v = r.f32();
            for (double& v : l.bn_running_mean) v = r.f32();
            for (double& v : l.bn_running_var) v = r.f32();
        }
    }
    r.expect_end();
    return m;
}

/// Serialized value count implied by (depth, width); file size is
/// 16 header bytes + 4 * this.
inline std::size_t checkpoint_param_count(int depth, int width) {
    std::size_t n = std::size_t(width) * 9 + width;            // first layer
    n += std::size_t(depth - 2) * (std::size_t(width) * width * 9 + width + 4 * std::size_t(width));
    n += std::size_t(width) * 9 + 1;                           // last layer
    return n;
}

} // namespace ppx
