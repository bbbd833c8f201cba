#include "remo/geometry.hpp"

#include <algorithm>
#include <string>

namespace remo {

Vec3 Vec3::normalized() const {
    const double n = norm();
    if (n < 1e-12) throw NumericError("normalize: zero-length vector");
    return {x / n, y / n, z / n};
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += m[3 * i + k] * o.m[3 * k + j];
            r.m[3 * i + j] = acc;
        }
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[3 * i + j] = m[3 * j + i];
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Quat Quat::normalized() const {
    const double n = norm();
    if (n < 1e-12) throw NumericError("quaternion normalize: zero norm");
    return {w / n, x / n, y / n, z / n};
}

Vec3 Quat::rotate(const Vec3& v) const {
    // v' = v + 2w(u x v) + 2(u x (u x v)), u = vector part
    const Vec3 u{x, y, z};
    const Vec3 uv = u.cross(v);
    const Vec3 uuv = u.cross(uv);
    return v + uv * (2.0 * w) + uuv * 2.0;
}

Mat3 Quat::to_matrix() const {
    Mat3 r;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, xz = x * z, yz = y * z;
    const double wx = w * x, wy = w * y, wz = w * z;
    r.m = {1 - 2 * (yy + zz), 2 * (xy - wz),     2 * (xz + wy),
           2 * (xy + wz),     1 - 2 * (xx + zz), 2 * (yz - wx),
           2 * (xz - wy),     2 * (yz + wx),     1 - 2 * (xx + yy)};
    return r;
}

Quat Quat::from_matrix(const Mat3& r) {
    // Shepperd's method: branch on the largest of trace / diagonal entries.
    const double t = r(0, 0) + r(1, 1) + r(2, 2);
    Quat q;
    if (t > 0) {
        double s = std::sqrt(t + 1.0) * 2;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return q.normalized().canonical();
}

Mat3 rot6d_to_matrix(const Rot6d& r) {
    const double n1 = r.a1.norm();
    if (n1 < 1e-8) throw NumericError("rot6d: degenerate input, |a1| = " + std::to_string(n1));
    const Vec3 b1 = r.a1 * (1.0 / n1);
    const Vec3 u = r.a2 - b1 * r.a2.dot(b1);
    const double n2 = u.norm();
    if (n2 < 1e-8) throw NumericError("rot6d: degenerate input, a2 parallel to a1");
    const Vec3 b2 = u * (1.0 / n2);
    const Vec3 b3 = b1.cross(b2);
    Mat3 m;
    m.m = {b1.x, b2.x, b3.x, b1.y, b2.y, b3.y, b1.z, b2.z, b3.z};
    return m;
}

Rot6d matrix_to_rot6d(const Mat3& m) {
    return {{m(0, 0), m(1, 0), m(2, 0)}, {m(0, 1), m(1, 1), m(2, 1)}};
}

Vec3 axis_angle_from_matrix(const Mat3& r) {
    const double t = r(0, 0) + r(1, 1) + r(2, 2);
    const double c = std::clamp((t - 1.0) / 2.0, -1.0, 1.0);
    const double angle = std::acos(c);
    if (angle < 1e-8) return {0, 0, 0};
    if (angle > M_PI - 1e-6) {
        // Near pi: sin(angle) ~ 0, recover the axis from R = 2aa^T - I + ...
        // via the largest diagonal element.
        int i = 0;
        if (r(1, 1) > r(i, i)) i = 1;
        if (r(2, 2) > r(i, i)) i = 2;
        const int j = (i + 1) % 3, k = (i + 2) % 3;
        double ai = std::sqrt(std::max(0.0, (r(i, i) - r(j, j) - r(k, k) + 1.0) / 2.0));
        if (ai < 1e-12) throw NumericError("axis_angle: degenerate pi rotation");
        double aj = (r(i, j) + r(j, i)) / (4.0 * ai) * 2.0;
        double ak = (r(i, k) + r(k, i)) / (4.0 * ai) * 2.0;
        Vec3 axis;
        (&axis.x)[i] = ai;
        (&axis.x)[j] = aj;
        (&axis.x)[k] = ak;
        axis = axis.normalized();
        // Fix the sign so the off-diagonal antisymmetric part agrees.
        const Vec3 v{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
        if (axis.dot(v) < 0) axis = -axis;
        return axis * angle;
    }
    const double s = 2.0 * std::sin(angle);
    const Vec3 axis{(r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    return axis * angle;
}

Mat3 matrix_from_axis_angle(const Vec3& aa) {
    const double angle = aa.norm();
    if (angle < 1e-12) return Mat3::identity();
    const Vec3 a = aa * (1.0 / angle);
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    Mat3 r;
    r.m = {t * a.x * a.x + c,       t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y,
           t * a.x * a.y + s * a.z, t * a.y * a.y + c,       t * a.y * a.z - s * a.x,
           t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c};
    return r;
}

SwingTwist swing_twist_decompose(const Quat& q, const Vec3& axis) {
    // Work on the canonical (w >= 0) representative; then twist.w = q.w/n >= 0
    // and swing.w = n >= 0 fall out without any sign fixing, and
    // swing * twist == canonical(q) exactly.
    const Quat qc = q.canonical();
    const Vec3 u{qc.x, qc.y, qc.z};
    const double d = u.dot(axis);
    Quat twist{qc.w, axis.x * d, axis.y * d, axis.z * d};
    const double tn = twist.norm();
    if (tn < 1e-12) {
        // pi rotation about an axis orthogonal to `axis`: twist is identity.
        twist = Quat::identity();
    } else {
        twist = {twist.w / tn, twist.x / tn, twist.y / tn, twist.z / tn};
    }
    Quat swing = qc * twist.conjugate();
    return {swing.normalized(), twist.normalized()};
}

Quat swing_from_positions(const Vec3& rest_dir, const Vec3& target_dir) {
    const double c = std::clamp(rest_dir.dot(target_dir), -1.0, 1.0);
    Vec3 axis = rest_dir.cross(target_dir);
    const double s = axis.norm();
    if (s < 1e-12) {
        if (c > 0) return Quat::identity();
        // Antiparallel: rotate pi about a fixed perpendicular; pick the seed
        // axis from rest_dir's smallest-magnitude component.
        const double ax = std::abs(rest_dir.x), ay = std::abs(rest_dir.y), az = std::abs(rest_dir.z);
        Vec3 seed = (ax <= ay && ax <= az) ? Vec3{1, 0, 0} : (ay <= az ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
        const Vec3 perp = rest_dir.cross(seed).normalized();
        return Quat::from_axis_angle(perp, M_PI);
    }
    axis = axis * (1.0 / s);
    return Quat::from_axis_angle(axis, std::atan2(s, c)).canonical();
}

}  // namespace remo
