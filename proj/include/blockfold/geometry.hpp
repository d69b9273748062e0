#pragma once

// Rigid-frame arithmetic on SE(3): composition, inversion, point projection,
// axis-angle/quaternion/matrix conversions, Gram-Schmidt frames, and
// principal-axis frames for global (virtual) blocks. All double precision.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "blockfold/errors.hpp"

namespace blockfold {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }

    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }
    static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
        Mat3 r;
        r.m = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
        return r;
    }
    static Mat3 from_cols(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
        Mat3 r;
        r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
        return r;
    }

    double& operator()(int i, int j) { return m[3 * i + j]; }
    double operator()(int i, int j) const { return m[3 * i + j]; }

    Vec3 row(int i) const { return {m[3 * i], m[3 * i + 1], m[3 * i + 2]}; }
    Vec3 col(int j) const { return {m[j], m[3 + j], m[6 + j]}; }

    Mat3 transpose() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator-(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] - o.m[i];
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    double max_abs() const {
        double r = 0.0;
        for (double v : m) r = std::max(r, std::abs(v));
        return r;
    }
};

struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

// Axis-angle rotation: direction is the axis, magnitude the angle in radians.
struct RotationVector {
    Vec3 axis_times_angle;

    double angle() const { return axis_times_angle.norm(); }
};

struct Frame {
    Mat3 rotation = Mat3::identity();
    Vec3 translation;

    static Frame identity() { return Frame{}; }
};

// ---------------------------------------------------------------------------
// Core SE(3) operations.

// a then b applied right-to-left: (a o b)(x) = a(b(x)).
inline Frame compose(const Frame& a, const Frame& b) {
    Frame r;
    r.rotation = a.rotation * b.rotation;
    r.translation = a.rotation * b.translation + a.translation;
    return r;
}

// (R, t)^-1 = (R^T, -R^T t)
inline Frame inverse(const Frame& f) {
    Frame r;
    r.rotation = f.rotation.transpose();
    r.translation = -(r.rotation * f.translation);
    return r;
}

inline Vec3 apply(const Frame& f, const Vec3& v) { return f.rotation * v + f.translation; }

// Relative frame of t expressed in s: F_s^-1 o F_t.
inline Frame relative_frame(const Frame& s, const Frame& t) { return compose(inverse(s), t); }

// ---------------------------------------------------------------------------
// Rotation representations.

inline Quaternion rotvec_to_quat(const RotationVector& r) {
    const double theta = r.angle();
    if (theta < 1e-12) return Quaternion{1.0, 0.0, 0.0, 0.0};
    const double half = 0.5 * theta;
    const double s = std::sin(half) / theta;
    return Quaternion{std::cos(half), r.axis_times_angle.x * s, r.axis_times_angle.y * s,
                      r.axis_times_angle.z * s};
}

inline Mat3 quat_to_matrix(const Quaternion& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r.m = {1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * z * w,     2 * x * z + 2 * y * w,
           2 * x * y + 2 * z * w,     1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * x * w,
           2 * x * z - 2 * y * w,     2 * y * z + 2 * x * w,     1 - 2 * x * x - 2 * y * y};
    return r;
}

inline Frame rotvec_to_frame(const RotationVector& r, const Vec3& t) {
    Frame f;
    f.rotation = quat_to_matrix(rotvec_to_quat(r));
    f.translation = t;
    return f;
}

// Shepperd's method: pick the largest of (trace, R00, R11, R22).
inline Quaternion matrix_to_quat(const Mat3& R) {
    Quaternion q;
    const double tr = R(0, 0) + R(1, 1) + R(2, 2);
    if (tr > R(0, 0) && tr > R(1, 1) && tr > R(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + tr);
        q.w = 0.25 * s;
        q.x = (R(2, 1) - R(1, 2)) / s;
        q.y = (R(0, 2) - R(2, 0)) / s;
        q.z = (R(1, 0) - R(0, 1)) / s;
    } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2));
        q.w = (R(2, 1) - R(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (R(0, 1) + R(1, 0)) / s;
        q.z = (R(0, 2) + R(2, 0)) / s;
    } else if (R(1, 1) > R(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2));
        q.w = (R(0, 2) - R(2, 0)) / s;
        q.x = (R(0, 1) + R(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (R(1, 2) + R(2, 1)) / s;
    } else {
        const double s = 2.0 * std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1));
        q.w = (R(1, 0) - R(0, 1)) / s;
        q.x = (R(0, 2) + R(2, 0)) / s;
        q.y = (R(1, 2) + R(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return q;
}

inline RotationVector quat_to_rotvec(Quaternion q) {
    if (q.w < 0.0) {  // canonical hemisphere so theta lands in [0, pi]
        q.w = -q.w;
        q.x = -q.x;
        q.y = -q.y;
        q.z = -q.z;
    }
    const double vnorm = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
    const double theta = 2.0 * std::atan2(vnorm, q.w);
    if (vnorm < 1e-12) return RotationVector{Vec3{0, 0, 0}};
    const double s = theta / vnorm;
    return RotationVector{Vec3{q.x * s, q.y * s, q.z * s}};
}

inline RotationVector frame_to_rotvec(const Frame& f) { return quat_to_rotvec(matrix_to_quat(f.rotation)); }

// ---------------------------------------------------------------------------
// Frame construction.

// e1 = u_hat, e2 = orthogonalized v, e3 = e1 x e2; rotation columns [e1 e2 e3].
inline Frame gram_schmidt_frame(const Vec3& origin, const Vec3& u, const Vec3& v) {
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu <= 1e-9 || nv <= 1e-9) throw DegenerateGeometry("gram_schmidt_frame: near-zero axis vector");
    const Vec3 e1 = u / nu;
    const Vec3 w = v - v.dot(e1) * e1;
    const double nw = w.norm();
    // sin(angle between u and v); rejects both parallel and antiparallel inputs
    if (nw / nv <= 1e-6) throw DegenerateGeometry("gram_schmidt_frame: collinear axis vectors");
    const Vec3 e2 = w / nw;
    const Vec3 e3 = e1.cross(e2);
    Frame f;
    f.rotation = Mat3::from_cols(e1, e2, e3);
    f.translation = origin;
    return f;
}

namespace detail {

// Cyclic Jacobi for a symmetric 3x3. Returns eigenvalues (descending) and the
// corresponding eigenvectors as matrix columns.
inline void symmetric_eigen3(const Mat3& a_in, std::array<double, 3>& eigvals, Mat3& eigvecs) {
    Mat3 a = a_in;
    Mat3 v = Mat3::identity();
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = std::abs(a(0, 1)) + std::abs(a(0, 2)) + std::abs(a(1, 2));
        if (off < 1e-30) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                Mat3 g = Mat3::identity();
                g(p, p) = c;
                g(q, q) = c;
                g(p, q) = s;
                g(q, p) = -s;
                a = g.transpose() * a * g;
                v = v * g;
            }
        }
    }
    std::array<int, 3> order = {0, 1, 2};
    std::array<double, 3> lam = {a(0, 0), a(1, 1), a(2, 2)};
    if (lam[order[0]] < lam[order[1]]) std::swap(order[0], order[1]);
    if (lam[order[1]] < lam[order[2]]) std::swap(order[1], order[2]);
    if (lam[order[0]] < lam[order[1]]) std::swap(order[0], order[1]);
    Mat3 sorted;
    for (int j = 0; j < 3; ++j) {
        eigvals[j] = lam[order[j]];
        for (int i = 0; i < 3; ++i) sorted(i, j) = v(i, order[j]);
    }
    eigvecs = sorted;
}

}  // namespace detail

// Principal-axis frame of a point cloud: translation = centroid, rotation
// columns = eigenvectors of the centered covariance, eigenvalues descending.
// Sign of each axis is fixed by the third moment of the points along it
// (equivariant under rigid motion); when the distribution is symmetric the
// largest-magnitude entry is made positive instead. e3 is replaced by e1 x e2
// so the result is always a proper rotation.
inline Frame principal_frame(std::span<const Vec3> points) {
    const std::size_t n = points.size();
    if (n < 4) throw DegenerateGeometry("principal_frame: need at least 4 points");
    Vec3 centroid;
    for (const Vec3& p : points) centroid += p;
    centroid = centroid / static_cast<double>(n);

    Mat3 cov;
    for (const Vec3& p : points) {
        const Vec3 d = p - centroid;
        cov(0, 0) += d.x * d.x;
        cov(0, 1) += d.x * d.y;
        cov(0, 2) += d.x * d.z;
        cov(1, 1) += d.y * d.y;
        cov(1, 2) += d.y * d.z;
        cov(2, 2) += d.z * d.z;
    }
    cov(1, 0) = cov(0, 1);
    cov(2, 0) = cov(0, 2);
    cov(2, 1) = cov(1, 2);
    for (int i = 0; i < 9; ++i) cov.m[i] /= static_cast<double>(n);

    std::array<double, 3> lam{};
    Mat3 axes;
    detail::symmetric_eigen3(cov, lam, axes);
    if (lam[0] - lam[1] < 1e-9 || lam[1] - lam[2] < 1e-9)
        throw DegenerateGeometry("principal_frame: eigenvalue gap below tolerance, axes ambiguous");

    std::array<Vec3, 3> e = {axes.col(0), axes.col(1), axes.col(2)};
    for (int i = 0; i < 2; ++i) {
        double skew = 0.0;
        for (const Vec3& p : points) {
            const double d = (p - centroid).dot(e[i]);
            skew += d * d * d;
        }
        if (std::abs(skew) > 1e-12) {
            if (skew < 0.0) e[i] = -e[i];
        } else {
            // symmetric along this axis: make the largest-magnitude entry positive
            double best = e[i].x;
            if (std::abs(e[i].y) > std::abs(best)) best = e[i].y;
            if (std::abs(e[i].z) > std::abs(best)) best = e[i].z;
            if (best < 0.0) e[i] = -e[i];
        }
    }
    e[2] = e[0].cross(e[1]);

    Frame f;
    f.rotation = Mat3::from_cols(e[0], e[1], e[2]);
    f.translation = centroid;
    return f;
}

inline Frame principal_frame(const std::vector<Vec3>& points) {
    return principal_frame(std::span<const Vec3>(points.data(), points.size()));
}

// ---------------------------------------------------------------------------
// Validity helpers used by tests and input checking.

inline double orthogonality_error(const Mat3& r) { return (r.transpose() * r - Mat3::identity()).max_abs(); }

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
    return orthogonality_error(r) <= tol && std::abs(r.det() - 1.0) <= tol;
}

}  // namespace blockfold
