#pragma once

// Independent reference implementations used only by tests. These must not
// share code paths with the library: homogeneous 4x4 arithmetic stands in for
// frame composition, and the trigonometric closed form stands in for the
// iterative eigensolver.

#include <array>
#include <cmath>
#include <vector>

#include "blockfold/geometry.hpp"
#include "blockfold/rng.hpp"

namespace oracle {

using blockfold::Frame;
using blockfold::Mat3;
using blockfold::Rng;
using blockfold::Vec3;

using Mat4 = std::array<double, 16>;

inline Mat4 to_homogeneous(const Frame& f) {
    Mat4 h{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) h[4 * i + j] = f.rotation(i, j);
    h[3] = f.translation.x;
    h[7] = f.translation.y;
    h[11] = f.translation.z;
    h[15] = 1.0;
    return h;
}

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
    Mat4 c{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a[4 * i + k] * b[4 * k + j];
            c[4 * i + j] = s;
        }
    return c;
}

// Gauss-Jordan inverse of a 4x4; fine for well-conditioned rigid transforms.
inline Mat4 mat4_inverse(const Mat4& m_in) {
    std::array<double, 32> a{};
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) a[8 * i + j] = m_in[4 * i + j];
        a[8 * i + 4 + i] = 1.0;
    }
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[8 * r + col]) > std::abs(a[8 * pivot + col])) pivot = r;
        for (int j = 0; j < 8; ++j) std::swap(a[8 * col + j], a[8 * pivot + j]);
        const double d = a[8 * col + col];
        for (int j = 0; j < 8; ++j) a[8 * col + j] /= d;
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = a[8 * r + col];
            for (int j = 0; j < 8; ++j) a[8 * r + j] -= f * a[8 * col + j];
        }
    }
    Mat4 inv{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) inv[4 * i + j] = a[8 * i + 4 + j];
    return inv;
}

inline double frame_vs_mat4(const Frame& f, const Mat4& h) {
    const Mat4 fh = to_homogeneous(f);
    double err = 0.0;
    for (int i = 0; i < 16; ++i) err = std::max(err, std::abs(fh[i] - h[i]));
    return err;
}

inline Vec3 random_vec(Rng& rng, double scale = 1.0) {
    return Vec3{rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
}

inline Frame random_frame(Rng& rng) {
    // Uniform-ish rotation from a random quaternion.
    double q[4];
    double n = 0.0;
    for (double& c : q) {
        c = rng.normal();
        n += c * c;
    }
    n = std::sqrt(n);
    blockfold::Quaternion quat{q[0] / n, q[1] / n, q[2] / n, q[3] / n};
    Frame f;
    f.rotation = blockfold::quat_to_matrix(quat);
    f.translation = random_vec(rng, 5.0);
    return f;
}

// Closed-form (trigonometric) eigenvalues of a symmetric 3x3, descending,
// with eigenvectors from explicit null-space construction.
inline void eigen3_closed_form(const Mat3& a, std::array<double, 3>& lam, std::array<Vec3, 3>& vecs) {
    const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    const double q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
    const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
                      (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    if (p < 1e-30) {
        lam = {q, q, q};
        vecs = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
        return;
    }
    Mat3 b;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) b(i, j) = (a(i, j) - (i == j ? q : 0.0)) / p;
    double r = b.det() / 2.0;
    r = std::max(-1.0, std::min(1.0, r));
    const double phi = std::acos(r) / 3.0;
    lam[0] = q + 2.0 * p * std::cos(phi);
    lam[2] = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
    lam[1] = 3.0 * q - lam[0] - lam[2];

    for (int k = 0; k < 3; ++k) {
        // eigenvector of lam[k]: cross product of two rows of (A - lam I)
        Mat3 m = a;
        for (int i = 0; i < 3; ++i) m(i, i) -= lam[k];
        const Vec3 r0 = m.row(0), r1 = m.row(1), r2 = m.row(2);
        Vec3 c01 = r0.cross(r1), c02 = r0.cross(r2), c12 = r1.cross(r2);
        Vec3 best = c01;
        if (c02.norm2() > best.norm2()) best = c02;
        if (c12.norm2() > best.norm2()) best = c12;
        vecs[k] = best / best.norm();
    }
}

}  // namespace oracle
