#ifndef ENERGYFORGE_INTEGRATOR_HPP
#define ENERGYFORGE_INTEGRATOR_HPP

// Adaptive Dormand-Prince 5(4) integration of flow trajectories with torus
// wrap-around, sphere chart switching, and bisection-based event location.

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "energyforge/flow_system.hpp"

namespace energyforge {

struct TrajectorySample {
    double t = 0;
    ChartPoint point;
};

struct TrajectorySegment {
    std::vector<TrajectorySample> samples;  // times strictly monotone
    bool forward = true;

    const ChartPoint& endpoint() const { return samples.back().point; }
    double end_time() const { return samples.back().t; }
};

namespace detail {

// Classic Dormand-Prince coefficients.
struct Dp5Step {
    Vec2 y5;       // 5th-order solution increment applied
    double err;    // embedded error estimate (absolute)
};

inline Dp5Step dp5_step(const FlowSystem& sys, const ChartPoint& p, double h, double dir) {
    auto f = [&](const Vec2& offset) {
        ChartPoint q = p;
        q.x[0] += offset.x;
        q.x[1] += offset.y;
        return sys.velocity(q) * dir;
    };
    Vec2 k1 = f({0, 0});
    Vec2 k2 = f(k1 * (h / 5.0));
    Vec2 k3 = f(k1 * (3 * h / 40.0) + k2 * (9 * h / 40.0));
    Vec2 k4 = f(k1 * (44 * h / 45.0) - k2 * (56 * h / 15.0) + k3 * (32 * h / 9.0));
    Vec2 k5 = f(k1 * (19372 * h / 6561.0) - k2 * (25360 * h / 2187.0) +
                k3 * (64448 * h / 6561.0) - k4 * (212 * h / 729.0));
    Vec2 k6 = f(k1 * (9017 * h / 3168.0) - k2 * (355 * h / 33.0) + k3 * (46732 * h / 5247.0) +
                k4 * (49 * h / 176.0) - k5 * (5103 * h / 18656.0));
    Vec2 y5 = k1 * (35.0 / 384) + k3 * (500.0 / 1113) + k4 * (125.0 / 192) -
              k5 * (2187.0 / 6784) + k6 * (11.0 / 84);
    y5 = y5 * h;
    Vec2 k7 = f(y5);
    Vec2 y4 = k1 * (5179.0 / 57600) + k3 * (7571.0 / 16695) + k4 * (393.0 / 640) -
              k5 * (92097.0 / 339200) + k6 * (187.0 / 2100) + k7 * (1.0 / 40);
    y4 = y4 * h;
    return {y5, (y5 - y4).norm()};
}

}  // namespace detail

struct IntegrateOptions {
    double tol = -1;        // <0: use system default
    double max_step = -1;   // <0: use system default
    double max_chord = -1;  // cap on per-step displacement (event scanning)
    double sample_dt = -1;  // record samples at least this often (<0: every step)
};

// Steps the flow from `start` over signed `duration`. The callback is invoked
// after every accepted step with (t_prev, p_prev, t_new, p_new) in the chart of
// p_prev; returning false stops integration early. Chart switches happen only
// between steps, so each callback pair is same-chart.
template <typename StepCb>
ChartPoint integrate_steps(const FlowSystem& sys, const ChartPoint& start, double duration,
                           const IntegrateOptions& opt, StepCb&& cb) {
    const ManifoldSpec& m = sys.manifold;
    double tol = opt.tol > 0 ? opt.tol : sys.tol;
    double max_step = opt.max_step > 0 ? opt.max_step : sys.max_step;
    double dir = duration >= 0 ? 1.0 : -1.0;
    double total = std::abs(duration);

    ChartPoint p = start;
    m.normalize(p);
    if (m.kind == ManifoldKind::Sphere) {
        int pref = m.preferred_chart(p);
        if (pref != p.chart) p = m.to_chart(p, pref);
    }
    if (!m.in_domain(p)) throw IntegrationError("integrate: start outside domain");

    double t = 0;
    double h = std::min(max_step, total);
    int rejects_in_row = 0;
    while (t < total) {
        if (h < 1e-14 * std::max(1.0, total))
            throw IntegrationError("integrate: step underflow");
        h = std::min({h, total - t, max_step});
        if (opt.max_chord > 0) {
            double speed = sys.velocity(p).norm();
            if (speed > 0) h = std::min(h, opt.max_chord / speed);
            h = std::max(h, 1e-13);
        }
        auto step = detail::dp5_step(sys, p, h, dir);
        double scale = tol * (1.0 + std::max(std::abs(p.x[0]) + std::abs(step.y5.x),
                                             std::abs(p.x[1]) + std::abs(step.y5.y)));
        if (step.err > scale && h > 1e-13) {
            double shrink = 0.9 * std::pow(scale / (step.err + 1e-300), 0.2);
            h *= std::min(0.7, std::max(0.1, shrink));
            if (++rejects_in_row > 60) throw IntegrationError("integrate: no acceptable step");
            continue;
        }
        rejects_in_row = 0;
        ChartPoint q = p;
        q.x[0] += step.y5.x;
        q.x[1] += step.y5.y;
        double t_new = t + h;
        if (!m.in_domain(q))
            throw IntegrationError("integrate: trajectory exits the domain (t=" +
                                   std::to_string(dir * t_new) + ")");
        if (!cb(dir * t, p, dir * t_new, q)) return q;
        t = t_new;
        // normalize/switch between steps only
        m.normalize(q);
        if (m.kind == ManifoldKind::Sphere) {
            int pref = m.preferred_chart(q);
            if (pref != q.chart) q = m.to_chart(q, pref);
        }
        p = q;
        double grow = step.err > 0 ? 0.9 * std::pow(scale / step.err, 0.2) : 5.0;
        h *= std::min(5.0, std::max(0.2, grow));
    }
    return p;
}

// integrate: adaptive trajectory with recorded samples.
inline TrajectorySegment integrate(const FlowSystem& sys, const ChartPoint& start,
                                   double duration, double tol = -1) {
    IntegrateOptions opt;
    opt.tol = tol;
    TrajectorySegment seg;
    seg.forward = duration >= 0;
    ChartPoint p0 = start;
    sys.manifold.normalize(p0);
    seg.samples.push_back({0.0, p0});
    if (duration == 0) return seg;
    integrate_steps(sys, start, duration, opt,
                    [&](double, const ChartPoint&, double t1, const ChartPoint& p1) {
                        seg.samples.push_back({t1, p1});
                        return true;
                    });
    // normalize recorded points for external consumption
    for (auto& s : seg.samples) sys.manifold.normalize(s.point);
    return seg;
}

// Endpoint only.
inline ChartPoint flow_to(const FlowSystem& sys, const ChartPoint& start, double duration,
                          double tol = -1) {
    if (duration == 0) {
        ChartPoint p = start;
        sys.manifold.normalize(p);
        return p;
    }
    IntegrateOptions opt;
    opt.tol = tol;
    ChartPoint p = integrate_steps(sys, start, duration, opt,
                                   [](double, const ChartPoint&, double, const ChartPoint&) {
                                       return true;
                                   });
    sys.manifold.normalize(p);
    return p;
}

struct HitResult {
    double time = 0;  // positive flow time in the query direction
    ChartPoint point;
};

struct HitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// hit_time: first t in (0, t_max] with g(f^{±t}(start)) = 0, found by sign
// bracketing along accepted steps and bisection on time to tolerance 1e-8.
inline HitResult hit_time(const FlowSystem& sys, const ChartPoint& start,
                          const std::function<double(const ChartPoint&)>& g, bool forward,
                          double t_max, double time_tol = 1e-8) {
    ChartPoint p0 = start;
    sys.manifold.normalize(p0);
    double g0 = g(p0);
    double gscale = std::max(1e-12, std::abs(g0));
    if (std::abs(g0) <= 1e-12 * std::max(1.0, gscale))
        throw HitError("hit_time: g vanishes at the start point (degenerate bracket)");

    double bracket_a = -1, bracket_b = -1;
    ChartPoint pa = p0;
    double ga = g0;
    IntegrateOptions opt;
    integrate_steps(sys, p0, forward ? t_max : -t_max, opt,
                    [&](double t0, const ChartPoint&, double t1, const ChartPoint& p1) {
                        double g1 = g(p1);
                        gscale = std::max(gscale, std::abs(g1));
                        if ((ga <= 0) != (g1 <= 0)) {
                            bracket_a = std::abs(t0);
                            bracket_b = std::abs(t1);
                            return false;
                        }
                        ga = g1;
                        pa = p1;
                        return true;
                    });
    if (bracket_a < 0)
        throw HitError("hit_time: no sign change of g within t_max=" + std::to_string(t_max));

    // bisection on time, restarting each probe from the bracket-left point
    double sign_a = ga;
    ChartPoint left = pa;
    double lo = bracket_a, hi = bracket_b;
    while (hi - lo > time_tol) {
        double mid = 0.5 * (lo + hi);
        ChartPoint pm = flow_to(sys, left, forward ? (mid - bracket_a) : -(mid - bracket_a));
        double gm = g(pm);
        if ((sign_a <= 0) == (gm <= 0)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    double t_hit = 0.5 * (lo + hi);
    HitResult res;
    res.time = t_hit;
    res.point = flow_to(sys, left, forward ? (t_hit - bracket_a) : -(t_hit - bracket_a));
    return res;
}

}  // namespace energyforge

#endif
