#ifndef ENERGYFORGE_GEOMETRY_HPP
#define ENERGYFORGE_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace energyforge {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator/(double s) const { return {x / s, y / s}; }
    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }

    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm2() const { return x * x + y * y; }
    double norm() const { return std::sqrt(norm2()); }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

// 2x2 real matrix, row major.
struct Mat2 {
    double a = 0, b = 0, c = 0, d = 0;  // [[a,b],[c,d]]

    static Mat2 identity() { return {1, 0, 0, 1}; }

    Vec2 apply(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    double det() const { return a * d - b * c; }
    double trace() const { return a + d; }

    Mat2 inverse() const {
        double dt = det();
        if (std::abs(dt) < 1e-300) throw std::runtime_error("Mat2: singular matrix");
        return {d / dt, -b / dt, -c / dt, a / dt};
    }
    Mat2 mul(const Mat2& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d,
                c * o.a + d * o.c, c * o.b + d * o.d};
    }
};

// Eigenstructure of a real 2x2 matrix. For a complex pair the "frame" columns
// span the real invariant plane and put the matrix in [[re,im],[-im,re]] form.
struct Eigen2 {
    bool complex_pair = false;
    double re1 = 0, re2 = 0;   // real parts (re1 == re2 for a complex pair)
    double im = 0;             // imaginary part magnitude for a complex pair
    Vec2 v1{1, 0}, v2{0, 1};   // eigenvectors / real-frame columns
};

inline Eigen2 eigen2(const Mat2& m) {
    Eigen2 out;
    double tr = m.trace(), dt = m.det();
    double disc = tr * tr / 4.0 - dt;
    auto normalize_sign = [](Vec2 v) {
        double n = v.norm();
        if (n > 0) v = v / n;
        if (v.x < 0 || (v.x == 0 && v.y < 0)) v = v * -1.0;
        return v;
    };
    if (disc >= 0) {
        double rt = std::sqrt(disc);
        double l1 = tr / 2.0 + rt, l2 = tr / 2.0 - rt;
        out.re1 = l1;
        out.re2 = l2;
        auto eigvec = [&](double lam) -> Vec2 {
            // rows of (m - lam I) are orthogonal to the eigenvector
            Vec2 r1{m.a - lam, m.b}, r2{m.c, m.d - lam};
            Vec2 cand = r1.norm2() >= r2.norm2() ? Vec2{-r1.y, r1.x} : Vec2{-r2.y, r2.x};
            if (cand.norm2() < 1e-28) cand = {1, 0};
            return cand;
        };
        if (rt < 1e-12 * (std::abs(tr) + 1.0)) {
            // (near-)repeated eigenvalue: keep an orthonormal frame
            out.v1 = {1, 0};
            out.v2 = {0, 1};
        } else {
            out.v1 = normalize_sign(eigvec(l1));
            out.v2 = normalize_sign(eigvec(l2));
        }
    } else {
        out.complex_pair = true;
        out.re1 = out.re2 = tr / 2.0;
        out.im = std::sqrt(-disc);
        // real frame columns u, w with  m u = re u - im w,  m w = im u + re w
        // choose u = e1 unless degenerate
        Vec2 u{1, 0};
        Vec2 mu = m.apply(u);
        Vec2 w = (u * out.re1 - mu) / out.im;
        double n = std::sqrt(u.norm2() + w.norm2());
        out.v1 = u / n * std::sqrt(2.0);
        out.v2 = w / n * std::sqrt(2.0);
    }
    return out;
}

// Intersection of segments [p0,p1] and [q0,q1]. Returns parameters (s,t) in
// [0,1]^2 along each segment when they properly intersect.
struct SegHit {
    double s = 0;  // along [p0,p1]
    double t = 0;  // along [q0,q1]
    Vec2 point;
};

inline std::optional<SegHit> segment_intersect(const Vec2& p0, const Vec2& p1,
                                               const Vec2& q0, const Vec2& q1) {
    Vec2 r = p1 - p0, s = q1 - q0;
    double denom = r.cross(s);
    Vec2 qp = q0 - p0;
    if (std::abs(denom) < 1e-300) return std::nullopt;  // parallel (tangency handled by caller)
    double u = qp.cross(s) / denom;
    double v = qp.cross(r) / denom;
    const double eps = 1e-12;
    if (u < -eps || u > 1 + eps || v < -eps || v > 1 + eps) return std::nullopt;
    SegHit h;
    h.s = std::min(1.0, std::max(0.0, u));
    h.t = std::min(1.0, std::max(0.0, v));
    h.point = p0 + r * h.s;
    return h;
}

inline double point_segment_dist2(const Vec2& p, const Vec2& a, const Vec2& b) {
    Vec2 ab = b - a;
    double len2 = ab.norm2();
    if (len2 <= 0) return (p - a).norm2();
    double t = std::min(1.0, std::max(0.0, (p - a).dot(ab) / len2));
    Vec2 proj = a + ab * t;
    return (p - proj).norm2();
}

}  // namespace energyforge

#endif
