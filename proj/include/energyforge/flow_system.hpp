#ifndef ENERGYFORGE_FLOW_SYSTEM_HPP
#define ENERGYFORGE_FLOW_SYSTEM_HPP

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "energyforge/expression.hpp"
#include "energyforge/geometry.hpp"
#include "energyforge/manifold.hpp"

namespace energyforge {

// A vector field given by parsed component expressions per chart.
struct VectorField {
    // components[chart][i] for i < dimension
    std::vector<std::vector<ExprPtr>> components;
    std::vector<std::vector<std::string>> sources;  // original expression text
    std::map<std::string, double> parameters;
    std::string catalog_name;  // empty unless from the built-in catalog
};

// parse_field: one chart's component expressions -> syntax trees.
inline std::vector<ExprPtr> parse_field(const std::vector<std::string>& expressions,
                                        const std::vector<std::string>& coord_names,
                                        const std::map<std::string, double>& params = {}) {
    std::vector<ExprPtr> out;
    out.reserve(expressions.size());
    for (const auto& e : expressions) out.push_back(parse_expression(e, coord_names, params));
    return out;
}

struct IntegrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FlowSystem {
    ManifoldSpec manifold;
    VectorField field;
    double tol = 1e-9;       // integrator relative tolerance
    double max_step = 0.05;  // integrator max step
    bool test_only = false;  // fixture flag: waives the trapping invariant
    double builder_t_max = 200.0;
    std::string source_text;  // spec file content (hash/reproducibility)

    Vec2 velocity(const ChartPoint& p) const {
        const auto& comps = field.components.at(p.chart);
        double c[2] = {p.x[0], p.x[1]};
        Vec2 v;
        v.x = comps[0]->eval(c);
        if (manifold.dimension == 2) v.y = comps[1]->eval(c);
        if (!std::isfinite(v.x) || !std::isfinite(v.y))
            throw IntegrationError("vector field not finite at (" + std::to_string(p.x[0]) +
                                   "," + std::to_string(p.x[1]) + ") chart " +
                                   std::to_string(p.chart));
        return v;
    }

    // Field Jacobian by central differences (the project does no symbolic
    // differentiation beyond this).
    Mat2 jacobian(const ChartPoint& p, double h = 1e-6) const {
        auto shifted = [&](int i, double d) {
            ChartPoint q = p;
            q.x[i] += d;
            return velocity(q);
        };
        Vec2 dx = (shifted(0, h) - shifted(0, -h)) / (2 * h);
        if (manifold.dimension == 1) return Mat2{dx.x, 0, 0, 0};
        Vec2 dy = (shifted(1, h) - shifted(1, -h)) / (2 * h);
        return Mat2{dx.x, dy.x, dx.y, dy.y};
    }

    // Time-rescaled copy (same orbits): velocity divided by s.
    FlowSystem time_scaled(double s) const;
};

namespace detail {
struct ScaledExpr final : Expr {
    ExprPtr inner;
    double inv_scale;
    ScaledExpr(ExprPtr e, double s) : inner(std::move(e)), inv_scale(1.0 / s) {}
    double eval(const double* coords) const override { return inner->eval(coords) * inv_scale; }
};
}  // namespace detail

inline FlowSystem FlowSystem::time_scaled(double s) const {
    FlowSystem out = *this;
    for (auto& chart : out.field.components)
        for (auto& comp : chart) comp = std::make_shared<detail::ScaledExpr>(comp, s);
    return out;
}

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checks the ManifoldSpec/field invariants: chart transitions mutually inverse
// on the overlap (1e-10), and for plane-disk strict inward flow at 360 sampled
// boundary points (waived for test-only fixtures).
inline void validate_system(const FlowSystem& sys) {
    const auto& m = sys.manifold;
    if (m.dimension < 1 || m.dimension > 2)
        throw ValidationError("dimension must be 1 or 2");
    if (m.kind == ManifoldKind::Sphere || m.kind == ManifoldKind::Torus) {
        if (m.dimension != 2) throw ValidationError(kind_name(m.kind) + " requires n=2");
    }
    if (m.kind == ManifoldKind::Circle && m.dimension != 1)
        throw ValidationError("circle requires n=1");
    if ((int)sys.field.components.size() != m.chart_count())
        throw ValidationError("field must provide expressions for every chart");
    for (const auto& chart : sys.field.components)
        if ((int)chart.size() != m.dimension)
            throw ValidationError("field component count must equal dimension");

    if (m.kind == ManifoldKind::Sphere) {
        double defect = chart_roundtrip_defect(m);
        if (defect > 1e-10)
            throw ValidationError("chart transition round-trip defect " + std::to_string(defect));
    }

    if (m.kind == ManifoldKind::PlaneDisk && !sys.test_only) {
        if (m.dimension == 1) {
            if (sys.velocity(ChartPoint(0, m.radius)).x >= 0 ||
                sys.velocity(ChartPoint(0, -m.radius)).x <= 0)
                throw ValidationError("plane-disk field must point strictly inward at the boundary");
        } else {
            for (int i = 0; i < 360; ++i) {
                double a = 2 * kPi * i / 360.0;
                ChartPoint p(0, m.radius * std::cos(a), m.radius * std::sin(a));
                if (sys.velocity(p).dot(p.vec()) >= 0)
                    throw ValidationError(
                        "plane-disk field must point strictly inward on the boundary circle "
                        "(violated at angle index " + std::to_string(i) + ")");
            }
        }
    }

    // evaluation must be finite on a domain sample
    for (int c = 0; c < m.chart_count(); ++c) {
        for (int i = 0; i < 8; ++i) {
            double t = (i + 0.5) / 8.0;
            ChartPoint p(c, 0, 0);
            switch (m.kind) {
                case ManifoldKind::Circle: p = ChartPoint(0, t); break;
                case ManifoldKind::Torus: p = ChartPoint(0, t, 1.0 - t); break;
                case ManifoldKind::Sphere: p = ChartPoint(c, 1.8 * (t - 0.5), 0.7 * t); break;
                case ManifoldKind::PlaneDisk:
                    p = m.dimension == 1 ? ChartPoint(0, m.radius * (2 * t - 1))
                                         : ChartPoint(0, 0.7 * m.radius * (2 * t - 1),
                                                      0.2 * m.radius);
                    break;
            }
            sys.velocity(p);  // throws if not finite
        }
    }
}

}  // namespace energyforge

#endif
