#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ppx/dncnn.hpp"
#include "ppx/degrade.hpp"
#include "oracles.hpp"

using namespace ppx;
namespace fs = std::filesystem;

namespace {

Tensor4 random_tensor(int n, int c, int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor4 t = Tensor4::zeros(n, c, h, w);
    for (double& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

// Independent scalar 3x3 conv with zero padding, explicit loops.
Tensor4 naive_conv(const ConvLayer& l, const Tensor4& x) {
    Tensor4 out = Tensor4::zeros(x.n, l.out_ch, x.h, x.w);
    for (int b = 0; b < x.n; ++b)
        for (int oc = 0; oc < l.out_ch; ++oc)
            for (int y = 0; y < x.h; ++y)
                for (int xx = 0; xx < x.w; ++xx) {
                    double s = l.bias[std::size_t(oc)];
                    for (int ic = 0; ic < l.in_ch; ++ic)
                        for (int ky = -1; ky <= 1; ++ky)
                            for (int kx = -1; kx <= 1; ++kx) {
                                const int sy = y + ky, sx = xx + kx;
                                if (sy < 0 || sy >= x.h || sx < 0 || sx >= x.w) continue;
                                s += l.weights[((std::size_t(oc) * l.in_ch + ic) * 3 + (ky + 1)) * 3 +
                                               (kx + 1)] *
                                     x.at(b, ic, sy, sx);
                            }
                    out.at(b, oc, y, xx) = s;
                }
    return out;
}

std::vector<DegradedPair> smoke_pairs(int n, int size, double sigma, std::uint64_t seed) {
    std::vector<DegradedPair> pairs;
    for (int i = 0; i < n; ++i) {
        Rng rng(seed + i);
        ImageBuffer img = make_image(size, size, 1);
        for (double& v : img.data) v = rng.uniform(-1.0, 1.0);
        detail::gaussian_blur_inplace(img, 2.5);
        double mn = img.data[0], mx = img.data[0];
        for (double v : img.data) {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        for (double& v : img.data) v = 0.2 + 0.6 * (v - mn) / (mx - mn);
        DegradationConfig cfg = identity_degradation(seed + 1000 + i);
        cfg.noise_sigma = sigma;
        pairs.push_back(degrade(img, cfg));
    }
    return rectify_pairs(std::move(pairs));
}

} // namespace

TEST_CASE("zero model predicts a zero residual and restores the identity") {
    const DnCnnModel zero = make_zero_dncnn(4, 6);
    Rng rng(3);
    const Tensor4 x = random_tensor(2, 1, 8, 8, rng);
    const Tensor4 r = forward_infer(zero, x);
    for (double v : r.v) REQUIRE(v == 0.0);

    const ImageBuffer img = oracle::random_image(70, 55, rng);
    const ImageBuffer restored = restore(zero, img, 48); // exercises tiling
    REQUIRE(restored.data == img.data);
}

TEST_CASE("inference-mode forward treats batch items independently") {
    DnCnnModel m = make_dncnn(3, 4, 11);
    Rng rng(5);
    const Tensor4 a = random_tensor(1, 1, 6, 6, rng);
    const Tensor4 b = random_tensor(1, 1, 6, 6, rng);
    Tensor4 both = Tensor4::zeros(2, 1, 6, 6);
    std::copy(a.v.begin(), a.v.end(), both.v.begin());
    std::copy(b.v.begin(), b.v.end(), both.v.begin() + a.v.size());

    const Tensor4 ra = forward_infer(m, a);
    const Tensor4 rb = forward_infer(m, b);
    const Tensor4 rboth = forward_infer(m, both);
    for (std::size_t i = 0; i < ra.v.size(); ++i) REQUIRE(rboth.v[i] == ra.v[i]);
    for (std::size_t i = 0; i < rb.v.size(); ++i) REQUIRE(rboth.v[i + ra.v.size()] == rb.v[i]);
}

TEST_CASE("fixed tiny model matches a hand-unrolled scalar computation") {
    DnCnnModel m = make_dncnn(2, 2, 17); // conv+relu then plain conv
    Rng rng(29);
    const Tensor4 x = random_tensor(1, 1, 4, 4, rng);

    Tensor4 h = naive_conv(m.layers[0], x);
    for (double& v : h.v) v = std::max(0.0, v);
    const Tensor4 expected = naive_conv(m.layers[1], h);

    const Tensor4 got = forward_infer(m, x);
    REQUIRE(got.same_shape(expected));
    for (std::size_t i = 0; i < got.v.size(); ++i)
        REQUIRE(got.v[i] == Catch::Approx(expected.v[i]).margin(1e-12));
}

TEST_CASE("loss is zero with matching data and zero model") {
    DnCnnModel zero = make_zero_dncnn(3, 4);
    Rng rng(31);
    const Tensor4 photo = random_tensor(2, 1, 8, 8, rng);
    GradSet grads;
    const double loss = loss_and_gradients(zero, photo, photo, grads);
    REQUIRE(loss == 0.0);
    for (const auto& g : grads)
        for (double v : g) REQUIRE(v == 0.0);
}

TEST_CASE("analytic gradients match central finite differences (depth 2, width 2)") {
    DnCnnModel m = make_dncnn(2, 2, 43);
    Rng rng(47);
    const Tensor4 photo = random_tensor(2, 1, 8, 8, rng);
    const Tensor4 clean = random_tensor(2, 1, 8, 8, rng);

    GradSet grads;
    loss_and_gradients(m, photo, clean, grads);
    const auto blocks = trainable_params(m);
    const double worst = oracle::gradcheck_max_rel_err(
        blocks, grads, [&] { return dncnn_loss(m, photo, clean); });
    REQUIRE(worst < 1e-3);
}

TEST_CASE("analytic gradients match finite differences through batchnorm (depth 3)") {
    DnCnnModel m = make_dncnn(3, 2, 53);
    Rng rng(59);
    const Tensor4 photo = random_tensor(2, 1, 6, 6, rng);
    const Tensor4 clean = random_tensor(2, 1, 6, 6, rng);

    GradSet grads;
    loss_and_gradients(m, photo, clean, grads);
    const auto blocks = trainable_params(m);
    const double worst = oracle::gradcheck_max_rel_err(
        blocks, grads, [&] { return dncnn_loss(m, photo, clean); });
    REQUIRE(worst < 1e-3);
}

TEST_CASE("restore clamps into [0,1] and accepts any geometry") {
    DnCnnModel m = make_dncnn(3, 4, 61);
    Rng rng(67);
    const ImageBuffer img = oracle::random_image(50, 33, rng);
    const ImageBuffer out = restore(m, img, 24);
    REQUIRE(out.same_shape(img));
    for (double v : out.data) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    REQUIRE_THROWS_AS(restore(m, make_image(8, 8, 3, 0.5), 24), InvalidArgument);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    DnCnnModel m = make_dncnn(3, 3, 71);
    const std::vector<double> before = m.layers[1].weights;
    auto blocks = trainable_params(m);
    AdamState state = AdamState::init(blocks);
    GradSet zeros;
    for (const auto& b : blocks) zeros.emplace_back(b.n, 0.0);
    for (int t = 1; t <= 5; ++t) adam_step(blocks, zeros, state, AdamConfig{}, t);
    REQUIRE(m.layers[1].weights == before);
}

TEST_CASE("adam: constant gradient drives the step size toward the learning rate") {
    double p = 0.0;
    std::vector<ParamBlock> blocks{{&p, 1}};
    AdamState state = AdamState::init(blocks);
    AdamConfig cfg; // lr 1e-3
    const GradSet g{{0.37}};
    double prev = p;
    double step = 0.0;
    for (int t = 1; t <= 500; ++t) {
        adam_step(blocks, g, state, cfg, t);
        step = prev - p;
        prev = p;
    }
    REQUIRE(step == Catch::Approx(cfg.learning_rate).epsilon(0.01));
}

TEST_CASE("training is bit-deterministic given the seed") {
    const auto pairs = smoke_pairs(3, 24, 0.1, 911);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.patch_size = 12;
    cfg.seed = 77;
    const TrainResult a = train_restorer(pairs, cfg, 3, 4);
    const TrainResult b = train_restorer(pairs, cfg, 3, 4);
    REQUIRE(a.epoch_loss == b.epoch_loss);
    for (std::size_t i = 0; i < a.model.layers.size(); ++i) {
        REQUIRE(a.model.layers[i].weights == b.model.layers[i].weights);
        REQUIRE(a.model.layers[i].bias == b.model.layers[i].bias);
        REQUIRE(a.model.layers[i].bn_running_mean == b.model.layers[i].bn_running_mean);
    }
}

TEST_CASE("lr = 0 training returns the initialization") {
    const auto pairs = smoke_pairs(2, 24, 0.1, 313);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.patch_size = 12;
    cfg.seed = 55;
    const TrainResult r = train_restorer(pairs, cfg, 3, 4);
    const DnCnnModel init = make_dncnn(3, 4, cfg.seed);
    for (std::size_t i = 0; i < r.model.layers.size(); ++i) {
        REQUIRE(r.model.layers[i].weights == init.layers[i].weights);
        REQUIRE(r.model.layers[i].bias == init.layers[i].bias);
    }
}

TEST_CASE("training smoke: loss drops by 10x and the trend is monotone") {
    const auto pairs = smoke_pairs(10, 32, 0.15, 4242);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 8;
    cfg.patch_size = 16;
    cfg.seed = 2024;
    const TrainResult r = train_restorer(pairs, cfg, 4, 8);
    REQUIRE(r.epoch_loss.size() == 30);
    REQUIRE(r.epoch_loss.back() < r.epoch_loss.front() / 10.0);

    // moving average over window 5 is non-increasing
    const auto ma = [&](std::size_t i) {
        double s = 0.0;
        for (std::size_t k = i; k < i + 5; ++k) s += r.epoch_loss[k];
        return s / 5.0;
    };
    for (std::size_t i = 0; i + 5 < r.epoch_loss.size() - 4; ++i)
        REQUIRE(ma(i + 1) <= ma(i) * (1.0 + 1e-9));
}

TEST_CASE("checkpoint round trip preserves forward outputs bit-for-bit") {
    const auto dir = fs::temp_directory_path() / "ppx_test_dncnn";
    fs::create_directories(dir);
    const fs::path path = dir / "m.ckpt";

    DnCnnModel m = make_dncnn(4, 5, 87);
    // push running stats away from init so they round-trip too
    Rng rng(13);
    const Tensor4 x = random_tensor(2, 1, 12, 12, rng);
    forward(m, x, true);

    save_checkpoint(m, path);
    const DnCnnModel back = load_checkpoint(path);
    REQUIRE(back.depth == m.depth);
    REQUIRE(back.width == m.width);

    const Tensor4 ra = forward_infer(m, x);
    const Tensor4 rb = forward_infer(back, x);
    REQUIRE(ra.v == rb.v);

    // file size = 16-byte header + 4 bytes per serialized value
    REQUIRE(fs::file_size(path) == 16 + 4 * checkpoint_param_count(4, 5));

    // re-save is byte-identical
    const fs::path path2 = dir / "m2.ckpt";
    save_checkpoint(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
}

TEST_CASE("checkpoint header corruption is detected") {
    const auto dir = fs::temp_directory_path() / "ppx_test_dncnn";
    fs::create_directories(dir);
    const fs::path path = dir / "bad.ckpt";

    DnCnnModel m = make_dncnn(2, 2, 5);
    save_checkpoint(m, path);

    // corrupt magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), CheckpointError);

    // truncated payload
    save_checkpoint(m, path);
    fs::resize_file(path, fs::file_size(path) - 7);
    REQUIRE_THROWS_AS(load_checkpoint(path), CheckpointError);

    // version mismatch
    save_checkpoint(m, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), CheckpointError);
}
