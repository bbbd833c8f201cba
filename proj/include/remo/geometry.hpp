#pragma once

#include <array>
#include <cmath>

#include "remo/errors.hpp"

namespace remo {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const;
};

// Row-major 3x3.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    double& operator()(int r, int c) { return m[3 * r + c]; }
    double operator()(int r, int c) const { return m[3 * r + c]; }

    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 transposed() const;
    double det() const;
};

// Unit quaternion; w kept non-negative by canonicalization helpers.
struct Quat {
    double w = 1, x = 0, y = 0, z = 0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quat identity() { return {}; }
    static Quat from_axis_angle(const Vec3& axis_unit, double angle) {
        const double h = 0.5 * angle;
        const double s = std::sin(h);
        return {std::cos(h), axis_unit.x * s, axis_unit.y * s, axis_unit.z * s};
    }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat normalized() const;
    Quat conjugate() const { return {w, -x, -y, -z}; }
    Quat canonical() const { return w < 0 ? Quat{-w, -x, -y, -z} : *this; }

    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }

    Vec3 rotate(const Vec3& v) const;
    Mat3 to_matrix() const;
    static Quat from_matrix(const Mat3& r);
};

// First two columns of a rotation matrix before orthogonalization.
struct Rot6d {
    Vec3 a1, a2;
};

// Gram-Schmidt decode: b1=normalize(a1), b2=normalize(a2 - (a2.b1)b1), b3=b1xb2.
// Throws NumericError on degenerate input (near-zero a1 or a2 parallel to a1).
Mat3 rot6d_to_matrix(const Rot6d& r);
Rot6d matrix_to_rot6d(const Mat3& m);

// Rodrigues. Angle in [0, pi]; the angle-pi branch picks the axis from the
// largest diagonal element so the result is deterministic.
Vec3 axis_angle_from_matrix(const Mat3& r);
Mat3 matrix_from_axis_angle(const Vec3& aa);

// q = swing * twist, twist about `axis` (unit), swing axis orthogonal to it.
// Both outputs canonical (w >= 0).
struct SwingTwist {
    Quat swing, twist;
};
SwingTwist swing_twist_decompose(const Quat& q, const Vec3& axis);

// Minimal rotation taking rest_dir to target_dir (both unit). The
// antiparallel case rotates pi about a fixed perpendicular axis chosen by
// the smallest-magnitude component rule.
Quat swing_from_positions(const Vec3& rest_dir, const Vec3& target_dir);

}  // namespace remo
