#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include "ppx/errors.hpp"
#include "ppx/image.hpp"

namespace ppx {

/// 3x3 projective map, normalized so m[2][2] == 1 whenever it is nonzero.
struct Homography {
    double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
};

/// Four ROI corners ordered clockwise from top-left (y grows downward).
struct CornerQuad {
    PixelPoint tl, tr, br, bl;

    std::array<PixelPoint, 4> points() const { return {tl, tr, br, bl}; }
};

inline CornerQuad rect_quad(double w, double h) {
    return {{0.0, 0.0}, {w - 1.0, 0.0}, {w - 1.0, h - 1.0}, {0.0, h - 1.0}};
}

/// Strict convexity + clockwise orientation check. Misordered corners are
/// rejected here rather than silently reordered.
inline void validate_quad(const CornerQuad& q) {
    const auto pts = q.points();
    for (const PixelPoint& p : pts) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw DegenerateQuad("corner coordinates must be finite");
    }
    for (int i = 0; i < 4; ++i) {
        const PixelPoint& a = pts[i];
        const PixelPoint& b = pts[(i + 1) % 4];
        const PixelPoint& c = pts[(i + 2) % 4];
        const double cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
        if (!(cross > 0.0)) {
            std::ostringstream os;
            os << "degenerate or misordered corner quad: "
               << "(" << q.tl.x << "," << q.tl.y << ") (" << q.tr.x << "," << q.tr.y << ") ("
               << q.br.x << "," << q.br.y << ") (" << q.bl.x << "," << q.bl.y << ")";
            throw DegenerateQuad(os.str());
        }
    }
}

namespace detail {

// Gaussian elimination with partial pivoting on an n x n system.
template <int N>
inline void solve_linear(double a[N][N + 1]) {
    for (int col = 0; col < N; ++col) {
        int pivot = col;
        for (int r = col + 1; r < N; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        if (std::fabs(a[pivot][col]) < 1e-12)
            throw DegenerateQuad("singular system while estimating homography");
        if (pivot != col)
            for (int c = col; c <= N; ++c) std::swap(a[pivot][c], a[col][c]);
        for (int r = col + 1; r < N; ++r) {
            const double f = a[r][col] / a[col][col];
            for (int c = col; c <= N; ++c) a[r][c] -= f * a[col][c];
        }
    }
    for (int col = N - 1; col >= 0; --col) {
        double s = a[col][N];
        for (int c = col + 1; c < N; ++c) s -= a[col][c] * a[c][N];
        a[col][N] = s / a[col][col];
    }
}

inline void normalize(Homography& h) {
    const double s = h.m[2][2];
    if (std::fabs(s) > 1e-15) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) h.m[r][c] /= s;
    }
}

} // namespace detail

/// Projective action (x', y', w') = M (x, y, 1), divided by w'.
inline PixelPoint apply(const Homography& h, PixelPoint p) {
    const double X = h.m[0][0] * p.x + h.m[0][1] * p.y + h.m[0][2];
    const double Y = h.m[1][0] * p.x + h.m[1][1] * p.y + h.m[1][2];
    const double W = h.m[2][0] * p.x + h.m[2][1] * p.y + h.m[2][2];
    if (std::fabs(W) < 1e-12 * (std::fabs(p.x) + std::fabs(p.y) + 1.0))
        throw NumericalError("homography maps point to infinity");
    return {X / W, Y / W};
}

inline Homography invert(const Homography& h) {
    const auto& m = h.m;
    double adj[3][3];
    adj[0][0] = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    adj[0][1] = m[0][2] * m[2][1] - m[0][1] * m[2][2];
    adj[0][2] = m[0][1] * m[1][2] - m[0][2] * m[1][1];
    adj[1][0] = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    adj[1][1] = m[0][0] * m[2][2] - m[0][2] * m[2][0];
    adj[1][2] = m[0][2] * m[1][0] - m[0][0] * m[1][2];
    adj[2][0] = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    adj[2][1] = m[0][1] * m[2][0] - m[0][0] * m[2][1];
    adj[2][2] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    const double det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    if (std::fabs(det) < 1e-15) throw DegenerateQuad("singular homography cannot be inverted");
    Homography out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.m[r][c] = adj[r][c] / det;
    detail::normalize(out);
    return out;
}

/// Exact 4-point direct linear solve: eight unknowns (m22 fixed at 1) from
/// the four corner correspondences src -> dst. Corner residuals are
/// verified to be below 1e-6 px.
inline Homography homography_from_corners(const CornerQuad& src, const CornerQuad& dst) {
    validate_quad(src);
    validate_quad(dst);

    double a[8][9] = {};
    const auto s = src.points();
    const auto d = dst.points();
    for (int i = 0; i < 4; ++i) {
        const double x = s[i].x, y = s[i].y, u = d[i].x, v = d[i].y;
        double* r0 = a[2 * i];
        double* r1 = a[2 * i + 1];
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
    }
    detail::solve_linear<8>(a);

    Homography h;
    h.m[0][0] = a[0][8]; h.m[0][1] = a[1][8]; h.m[0][2] = a[2][8];
    h.m[1][0] = a[3][8]; h.m[1][1] = a[4][8]; h.m[1][2] = a[5][8];
    h.m[2][0] = a[6][8]; h.m[2][1] = a[7][8]; h.m[2][2] = 1.0;

    for (int i = 0; i < 4; ++i) {
        const PixelPoint p = apply(h, s[i]);
        if (std::hypot(p.x - d[i].x, p.y - d[i].y) > 1e-6)
            throw DegenerateQuad("ill-conditioned corner correspondences");
    }
    return h;
}

/// Inverse-map warp: h carries source -> output coordinates, and every
/// output pixel samples the source at h^-1 (x, y) with edge-clamped
/// bilinear interpolation.
inline ImageBuffer warp_image(const ImageBuffer& img, const Homography& h, int out_w, int out_h) {
    const Homography inv = invert(h);
    ImageBuffer out = make_image(out_w, out_h, img.channels);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const PixelPoint p = apply(inv, {double(x), double(y)});
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = sample_bilinear(img, p.x, p.y, c);
        }
    }
    return out;
}

/// Resample the quad content of a photograph onto an out_w x out_h
/// rectangle: the keystone-removal step.
inline ImageBuffer rectify(const ImageBuffer& photo, const CornerQuad& corners, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw InvalidArgument("rectify target must be >= 1");
    const Homography photo_to_out = homography_from_corners(corners, rect_quad(out_w, out_h));
    return warp_image(photo, photo_to_out, out_w, out_h);
}

} // namespace ppx
