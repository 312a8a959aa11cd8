#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ppx/geometry.hpp"
#include "ppx/metrics.hpp"
#include "ppx/rng.hpp"
#include "oracles.hpp"

using namespace ppx;

namespace {
double corner_residual(const Homography& h, const CornerQuad& src, const CornerQuad& dst) {
    double worst = 0.0;
    const auto s = src.points(), d = dst.points();
    for (int i = 0; i < 4; ++i) {
        const PixelPoint p = apply(h, s[std::size_t(i)]);
        worst = std::max(worst, std::hypot(p.x - d[std::size_t(i)].x, p.y - d[std::size_t(i)].y));
    }
    return worst;
}
} // namespace

TEST_CASE("src == dst gives the identity matrix") {
    const CornerQuad q = rect_quad(64, 48);
    const Homography h = homography_from_corners(q, q);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            REQUIRE(h.m[r][c] == Catch::Approx(r == c ? 1.0 : 0.0).margin(1e-9));
}

TEST_CASE("shifted dst gives a pure translation") {
    const CornerQuad src = rect_quad(64, 48);
    CornerQuad dst = src;
    for (PixelPoint* p : {&dst.tl, &dst.tr, &dst.br, &dst.bl}) {
        p->x += 5.0;
        p->y += 3.0;
    }
    const Homography h = homography_from_corners(src, dst);
    REQUIRE(h.m[0][2] == Catch::Approx(5.0).margin(1e-9));
    REQUIRE(h.m[1][2] == Catch::Approx(3.0).margin(1e-9));
    REQUIRE(h.m[2][0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(h.m[2][1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(h.m[2][2] == 1.0);

    const PixelPoint p = apply(h, {10.0, 20.0});
    REQUIRE(p.x == Catch::Approx(15.0).margin(1e-9));
    REQUIRE(p.y == Catch::Approx(23.0).margin(1e-9));

    const Homography inv = invert(h);
    REQUIRE(inv.m[0][2] == Catch::Approx(-5.0).margin(1e-9));
    REQUIRE(inv.m[1][2] == Catch::Approx(-3.0).margin(1e-9));
}

TEST_CASE("random convex quads: corner residual and round-trip properties") {
    Rng rng(42);
    const CornerQuad unit = rect_quad(64, 64);
    for (int trial = 0; trial < 100; ++trial) {
        const CornerQuad src = oracle::random_convex_quad(rng);
        const Homography h = homography_from_corners(src, unit);
        REQUIRE(corner_residual(h, src, unit) < 1e-6);

        const Homography hinv = invert(h);
        for (int k = 0; k < 5; ++k) {
            const PixelPoint p{rng.uniform(0.0, 100.0), rng.uniform(0.0, 80.0)};
            const PixelPoint q = apply(hinv, apply(h, p));
            REQUIRE(std::hypot(q.x - p.x, q.y - p.y) < 1e-9);
        }

        const Homography hh = invert(invert(h));
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) REQUIRE(hh.m[r][c] == Catch::Approx(h.m[r][c]).margin(1e-9));
    }
}

TEST_CASE("degenerate and misordered quads are rejected") {
    CornerQuad collinear{{0, 0}, {10, 0}, {20, 0}, {0, 10}};
    REQUIRE_THROWS_AS(validate_quad(collinear), DegenerateQuad);

    // counter-clockwise ordering (swapped tr/bl)
    CornerQuad ccw{{0, 0}, {0, 10}, {10, 10}, {10, 0}};
    REQUIRE_THROWS_AS(validate_quad(ccw), DegenerateQuad);

    CornerQuad ok = rect_quad(11, 7);
    REQUIRE_NOTHROW(validate_quad(ok));
}

TEST_CASE("warp with identity homography copies the image") {
    Rng rng(9);
    const ImageBuffer img = oracle::random_image(24, 16, rng);
    const ImageBuffer out = warp_image(img, Homography{}, 24, 16);
    REQUIRE(out.data == img.data);
}

TEST_CASE("warping a constant image yields the same constant") {
    const ImageBuffer img = make_image(32, 32, 1, 0.42);
    Rng rng(4);
    const Homography h =
        homography_from_corners(rect_quad(32, 32), oracle::random_convex_quad(rng, 31, 31));
    const ImageBuffer out = warp_image(img, h, 32, 32);
    for (double v : out.data) REQUIRE(v == Catch::Approx(0.42).margin(1e-12));
}

TEST_CASE("rectify with full-frame corners is the identity") {
    Rng rng(13);
    const ImageBuffer img = oracle::random_image(40, 30, rng);
    const ImageBuffer out = rectify(img, rect_quad(40, 30), 40, 30);
    REQUIRE(out.same_shape(img));
    for (std::size_t i = 0; i < out.data.size(); ++i)
        REQUIRE(out.data[i] == Catch::Approx(img.data[i]).margin(1e-6));
}

TEST_CASE("rectify of an axis-aligned sub-rectangle equals crop + resize") {
    Rng rng(21);
    const ImageBuffer img = oracle::random_image(60, 50, rng);
    const int x0 = 8, y0 = 5, cw = 33, ch = 27;
    const CornerQuad corners{{double(x0), double(y0)},
                             {double(x0 + cw - 1), double(y0)},
                             {double(x0 + cw - 1), double(y0 + ch - 1)},
                             {double(x0), double(y0 + ch - 1)}};
    const int out_w = 48, out_h = 40;
    const ImageBuffer rect = rectify(img, corners, out_w, out_h);

    ImageBuffer crop = make_image(cw, ch, 1);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) crop.at(y, x) = img.at(y0 + y, x0 + x);
    const ImageBuffer ref = resize_bilinear(crop, out_w, out_h);

    REQUIRE(rect.same_shape(ref));
    for (std::size_t i = 0; i < rect.data.size(); ++i)
        REQUIRE(rect.data[i] == Catch::Approx(ref.data[i]).margin(1e-6));
}
