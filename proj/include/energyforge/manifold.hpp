#ifndef ENERGYFORGE_MANIFOLD_HPP
#define ENERGYFORGE_MANIFOLD_HPP

// Chart-based descriptions of the supported 1- and 2-manifolds:
//   circle      - periodic [0,1), one chart
//   torus       - periodic unit square, one chart
//   sphere      - two stereographic charts (chart 0 about the north pole,
//                 chart 1 about the south pole), overlap annulus r in [1/2, 2]
//   plane-disk  - radius R disk (n=2) or interval [-R,R] (n=1), one chart;
//                 a trapped testing domain, not closed

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "energyforge/geometry.hpp"

namespace energyforge {

enum class ManifoldKind { Circle, Torus, Sphere, PlaneDisk };

inline std::string kind_name(ManifoldKind k) {
    switch (k) {
        case ManifoldKind::Circle: return "circle";
        case ManifoldKind::Torus: return "torus";
        case ManifoldKind::Sphere: return "sphere";
        case ManifoldKind::PlaneDisk: return "plane-disk";
    }
    return "?";
}

inline ManifoldKind kind_from_name(const std::string& s) {
    if (s == "circle") return ManifoldKind::Circle;
    if (s == "torus") return ManifoldKind::Torus;
    if (s == "sphere") return ManifoldKind::Sphere;
    if (s == "plane-disk" || s == "plane_disk" || s == "disk") return ManifoldKind::PlaneDisk;
    throw std::runtime_error("unknown manifold kind '" + s + "'");
}

struct ChartPoint {
    int chart = 0;
    std::array<double, 2> x{0.0, 0.0};

    ChartPoint() = default;
    ChartPoint(int c, double x0, double x1 = 0.0) : chart(c), x{x0, x1} {}
    Vec2 vec() const { return {x[0], x[1]}; }
};

// Sphere stereographic chart radii: charts are used for |x| <= kSphereChartMax,
// integration switches charts beyond kSphereSwitch, and the declared overlap
// annulus is [1/kSphereChartMax, kSphereChartMax].
constexpr double kSphereChartMax = 2.0;
constexpr double kSphereSwitch = 1.5;

struct ManifoldSpec {
    ManifoldKind kind = ManifoldKind::Torus;
    int dimension = 2;
    double radius = 1.0;  // plane-disk only

    int chart_count() const { return kind == ManifoldKind::Sphere ? 2 : 1; }
    bool periodic() const { return kind == ManifoldKind::Circle || kind == ManifoldKind::Torus; }
    bool closed() const { return kind != ManifoldKind::PlaneDisk; }

    // Wraps periodic coordinates into [0,1).
    void normalize(ChartPoint& p) const {
        if (!periodic()) return;
        for (int i = 0; i < dimension; ++i) {
            p.x[i] -= std::floor(p.x[i]);
            if (p.x[i] >= 1.0) p.x[i] = 0.0;  // guard against -1e-18 wrap
        }
    }

    bool in_domain(const ChartPoint& p) const {
        switch (kind) {
            case ManifoldKind::Circle:
            case ManifoldKind::Torus:
                return true;
            case ManifoldKind::Sphere:
                return p.vec().norm() <= kSphereChartMax * 1.35;
            case ManifoldKind::PlaneDisk:
                if (dimension == 1) return std::abs(p.x[0]) <= radius;
                return p.vec().norm() <= radius;
        }
        return false;
    }

    // Sphere chart transition (an involution): x -> x / |x|^2.
    ChartPoint to_chart(const ChartPoint& p, int target) const {
        if (p.chart == target) return p;
        if (kind != ManifoldKind::Sphere)
            throw std::runtime_error("to_chart: single-chart manifold");
        double r2 = p.vec().norm2();
        if (r2 < 1e-300) throw std::runtime_error("to_chart: chart origin maps to infinity");
        return ChartPoint(target, p.x[0] / r2, p.x[1] / r2);
    }

    // Jacobian of the sphere transition at p (for pushing velocities).
    Mat2 transition_jacobian(const ChartPoint& p) const {
        double u = p.x[0], v = p.x[1];
        double r2 = u * u + v * v;
        double r4 = r2 * r2;
        return Mat2{(v * v - u * u) / r4, -2 * u * v / r4,
                    -2 * u * v / r4, (u * u - v * v) / r4};
    }

    // Unit-sphere embedding of a chart point (sphere only).
    std::array<double, 3> embed(const ChartPoint& p) const {
        double u = p.x[0], v = p.x[1];
        double r2 = u * u + v * v;
        double denom = 1.0 + r2;
        double X = 2 * u / denom, Y = 2 * v / denom, Z = (1 - r2) / denom;
        if (p.chart == 1) Z = -Z;  // chart 1 is centered at the south pole
        return {X, Y, Z};
    }

    // Minimal-image displacement from a to b within one chart.
    Vec2 displacement(const ChartPoint& a, const ChartPoint& b) const {
        Vec2 d{b.x[0] - a.x[0], b.x[1] - a.x[1]};
        if (periodic()) {
            d.x -= std::round(d.x);
            if (dimension == 2) d.y -= std::round(d.y);
        }
        return d;
    }

    // Metric distance. Torus/circle: flat quotient metric. Sphere: chordal
    // distance of the unit-sphere embedding. Plane: Euclidean.
    double distance(const ChartPoint& a, const ChartPoint& b) const {
        switch (kind) {
            case ManifoldKind::Circle: {
                double d = std::abs(a.x[0] - b.x[0]);
                d -= std::floor(d);
                return std::min(d, 1.0 - d);
            }
            case ManifoldKind::Torus:
                return displacement(a, b).norm();
            case ManifoldKind::Sphere: {
                auto ea = embed(a), eb = embed(b);
                double s = 0;
                for (int i = 0; i < 3; ++i) s += (ea[i] - eb[i]) * (ea[i] - eb[i]);
                return std::sqrt(s);
            }
            case ManifoldKind::PlaneDisk:
                if (dimension == 1) return std::abs(a.x[0] - b.x[0]);
                if (a.chart != b.chart) throw std::runtime_error("distance: chart mismatch");
                return (a.vec() - b.vec()).norm();
        }
        return 0;
    }

    // Preferred chart for continuing integration from p.
    int preferred_chart(const ChartPoint& p) const {
        if (kind != ManifoldKind::Sphere) return p.chart;
        return p.vec().norm() > kSphereSwitch ? 1 - p.chart : p.chart;
    }

    std::vector<std::string> coord_names() const {
        if (dimension == 1) return {"x"};
        return {"x", "y"};
    }
};

// Chart transition round-trip defect, sampled over the declared overlap
// annulus; the invariant requires < 1e-10.
inline double chart_roundtrip_defect(const ManifoldSpec& m, int samples = 360) {
    if (m.kind != ManifoldKind::Sphere) return 0.0;
    double worst = 0.0;
    for (int i = 0; i < samples; ++i) {
        double ang = 2 * kPi * i / samples;
        double r = 0.5 + 1.5 * ((i * 7) % samples) / double(samples);
        ChartPoint p(0, r * std::cos(ang), r * std::sin(ang));
        ChartPoint q = m.to_chart(m.to_chart(p, 1), 0);
        worst = std::max(worst, (q.vec() - p.vec()).norm());
    }
    return worst;
}

}  // namespace energyforge

#endif
