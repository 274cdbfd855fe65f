#ifndef ENERGYFORGE_FIXED_POINTS_HPP
#define ENERGYFORGE_FIXED_POINTS_HPP

// Fixed point detection and certification: damped-Newton refinement of
// sign-change boxes, topological-hyperbolicity screening via the linearization
// spectrum, affine conjugating charts (unstable directions first), local Morse
// energy functions, and invariant-manifold tracing.

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "energyforge/chain.hpp"
#include "energyforge/integrator.hpp"

namespace energyforge {

struct NonHyperbolicError : std::runtime_error {
    ChartPoint location;
    NonHyperbolicError(const ChartPoint& p, const std::string& msg)
        : std::runtime_error(msg), location(p) {}
};

enum class PointKind { Sink, Saddle, Source };

inline const char* kind_name(PointKind k) {
    switch (k) {
        case PointKind::Sink: return "sink";
        case PointKind::Saddle: return "saddle";
        case PointKind::Source: return "source";
    }
    return "?";
}

struct FixedPointRecord {
    ChartPoint location;
    int lambda = 0;  // dim of the unstable manifold
    PointKind kind = PointKind::Sink;
    Mat2 linearization;    // field Jacobian at the location
    bool complex_pair = false;
    double re_fast = 0;    // eigenvalue real parts, unstable-first ordering
    double re_slow = 0;
    Vec2 axis_u{1, 0};     // chart-frame axis directions (columns of P)
    Vec2 axis_s{0, 1};
    Mat2 frame;            // P^{-1}: maps displacements to eigen coordinates
    double r_p = 0;        // trusted ball radius (chart units around location)
    double frame_norm = 1; // operator norm of P (eigen->displacement)

    // eigen coordinates of y relative to the point (unstable axis first),
    // optionally scaled; wraps/transitions into the record's chart
    Vec2 eigen_coords(const ManifoldSpec& m, const ChartPoint& y, double scale = 1.0) const {
        ChartPoint q = y;
        if (q.chart != location.chart) q = m.to_chart(q, location.chart);
        Vec2 d = m.displacement(location, q);
        return frame.apply(d) * scale;
    }
    ChartPoint from_eigen(const ManifoldSpec& m, const Vec2& x, double scale = 1.0) const {
        Mat2 P = frame.inverse();
        Vec2 d = P.apply(x / scale);
        ChartPoint q = location;
        q.x[0] += d.x;
        q.x[1] += d.y;
        m.normalize(q);
        return q;
    }

    double max_rate() const { return std::max(std::abs(re_fast), std::abs(re_slow)); }
};

// ---------------------------------------------------------------------------
// detection
// ---------------------------------------------------------------------------

namespace detail {

inline bool newton_refine(const FlowSystem& sys, ChartPoint& p, double tol_v) {
    for (int it = 0; it < 80; ++it) {
        Vec2 v = sys.velocity(p);
        double vn = std::max(std::abs(v.x), std::abs(v.y));
        if (vn <= tol_v) return true;
        Mat2 J = sys.jacobian(p);
        if (sys.manifold.dimension == 1) {
            if (std::abs(J.a) < 1e-14) return false;
            J = Mat2{J.a, 0, 0, 1};
        }
        if (std::abs(J.det()) < 1e-14) return false;
        Vec2 step = J.inverse().apply(v) * -1.0;
        if (sys.manifold.dimension == 1) step.y = 0;
        double alpha = 1.0;
        bool moved = false;
        for (int k = 0; k < 12; ++k) {
            ChartPoint q = p;
            q.x[0] += alpha * step.x;
            q.x[1] += alpha * step.y;
            sys.manifold.normalize(q);
            if (!sys.manifold.in_domain(q)) {
                alpha *= 0.5;
                continue;
            }
            Vec2 w = sys.velocity(q);
            if (std::max(std::abs(w.x), std::abs(w.y)) < vn * (1.0 - 0.25 * alpha)) {
                p = q;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) return false;
    }
    return false;
}

}  // namespace detail

struct FixedPointOptions {
    double tol_zero = 1e-10;   // |v| at an accepted zero
    double tol_hyp = 1e-3;     // min |Re mu|
    double dedup = 1e-6;       // metric merge distance
};

// Classifies a refined zero; throws NonHyperbolicError when the spectrum has a
// near-neutral direction (the flow then falls outside the studied class).
inline FixedPointRecord classify_fixed_point(const FlowSystem& sys, const ChartPoint& p,
                                             const FixedPointOptions& opt = {}) {
    FixedPointRecord rec;
    rec.location = p;
    Mat2 J = sys.jacobian(p);
    rec.linearization = J;
    if (sys.manifold.dimension == 1) {
        double mu = J.a;
        if (std::abs(mu) < opt.tol_hyp)
            throw NonHyperbolicError(p, "non-hyperbolic fixed point: |Re mu| = " +
                                            std::to_string(std::abs(mu)));
        rec.lambda = mu > 0 ? 1 : 0;
        rec.kind = mu > 0 ? PointKind::Source : PointKind::Sink;
        rec.re_fast = mu;
        rec.re_slow = mu;
        rec.axis_u = {1, 0};
        rec.axis_s = {1, 0};
        rec.frame = Mat2::identity();
        rec.frame_norm = 1.0;
        return rec;
    }

    Eigen2 eig = eigen2(J);
    rec.complex_pair = eig.complex_pair;
    if (std::abs(eig.re1) < opt.tol_hyp || std::abs(eig.re2) < opt.tol_hyp)
        throw NonHyperbolicError(
            p, "non-hyperbolic fixed point at (" + std::to_string(p.x[0]) + "," +
                   std::to_string(p.x[1]) + "): |Re mu| = " +
                   std::to_string(std::min(std::abs(eig.re1), std::abs(eig.re2))));
    rec.lambda = (eig.re1 > 0) + (eig.re2 > 0);
    rec.kind = rec.lambda == 0   ? PointKind::Sink
               : rec.lambda == 2 ? PointKind::Source
                                 : PointKind::Saddle;

    Vec2 v1 = eig.v1, v2 = eig.v2;
    double r1 = eig.re1, r2 = eig.re2;
    if (eig.complex_pair) {
        // real frame of the invariant plane: the quadratic |x|^2 is monotone
        // along the linearized flow in these coordinates
        rec.re_fast = rec.re_slow = eig.re1;
    } else {
        // unstable directions first; within a class, faster rate first
        bool swap = false;
        if ((r2 > 0) && !(r1 > 0)) swap = true;
        if (((r1 > 0) == (r2 > 0)) && std::abs(r2) > std::abs(r1)) swap = true;
        if (swap) {
            std::swap(v1, v2);
            std::swap(r1, r2);
        }
        rec.re_fast = r1;
        rec.re_slow = r2;
    }
    rec.axis_u = v1;
    rec.axis_s = v2;
    Mat2 P{v1.x, v2.x, v1.y, v2.y};
    if (std::abs(P.det()) < 1e-8) {
        // defective within tolerance: orthogonalize the second column
        Vec2 perp{-v1.y, v1.x};
        P = Mat2{v1.x, perp.x, v1.y, perp.y};
        if (std::abs(P.det()) < 1e-10)
            throw NonHyperbolicError(p, "cannot build an invariant frame (defective)");
        rec.axis_s = perp;
    }
    rec.frame = P.inverse();
    rec.frame_norm = std::sqrt(std::max(Vec2{P.a, P.c}.norm2(), Vec2{P.b, P.d}.norm2())) *
                     std::sqrt(2.0);
    return rec;
}

// Trusted ball radius: largest sampled radius where the field differs from its
// linearization by < 10% in norm. cap > 0 bounds the search by the domain.
inline double chart_ball_radius(const FlowSystem& sys, const FixedPointRecord& rec, double cap) {
    const Mat2& A = rec.linearization;
    const ManifoldSpec& m = sys.manifold;
    auto passes = [&](double r) {
        int angles = m.dimension == 1 ? 2 : 32;
        for (int a = 0; a < angles; ++a) {
            Vec2 dir = m.dimension == 1
                           ? Vec2{a == 0 ? 1.0 : -1.0, 0.0}
                           : Vec2{std::cos(2 * kPi * a / angles), std::sin(2 * kPi * a / angles)};
            ChartPoint q = rec.location;
            q.x[0] += r * dir.x;
            q.x[1] += r * dir.y;
            m.normalize(q);
            if (!m.in_domain(q)) return false;
            Vec2 lin = A.apply(dir * r);
            Vec2 v;
            try {
                v = sys.velocity(q);
            } catch (const IntegrationError&) {
                return false;
            }
            if ((v - lin).norm() > 0.10 * lin.norm()) return false;
        }
        return true;
    };
    const double shrink = std::pow(2.0, -0.125);
    for (double r = cap; r > 1e-4 * cap; r *= shrink)
        if (passes(r)) return r;
    return 1e-4 * cap;
}

inline double default_ball_cap(const FlowSystem& sys, const ChartPoint& p) {
    switch (sys.manifold.kind) {
        case ManifoldKind::Circle:
        case ManifoldKind::Torus: return 0.35;
        case ManifoldKind::Sphere: return std::min(1.2, std::max(0.05, 1.6 - p.vec().norm()));
        case ManifoldKind::PlaneDisk: {
            double d = sys.manifold.dimension == 1 ? sys.manifold.radius - std::abs(p.x[0])
                                                   : sys.manifold.radius - p.vec().norm();
            return 0.9 * std::max(1e-3, d);
        }
    }
    return 0.35;
}

// find_fixed_points: every sign-change box refined by damped Newton iteration,
// duplicates merged, each zero classified and given its trusted chart ball.
inline std::vector<FixedPointRecord> find_fixed_points(const FlowSystem& sys,
                                                       const BoxCover& cover,
                                                       const FixedPointOptions& opt = {}) {
    std::vector<ChartPoint> zeros;
    std::vector<char> candidate(cover.boxes.size(), 0);
    parallel_for((int64_t)cover.boxes.size(), [&](int64_t bi) {
        auto samples = cover.box_samples(cover.boxes[bi], 5);
        bool pos[2] = {false, false}, neg[2] = {false, false};
        for (const auto& s : samples) {
            Vec2 v = sys.velocity(s);
            const double z = 1e-14;
            if (v.x > -z) pos[0] = true;
            if (v.x < z) neg[0] = true;
            if (sys.manifold.dimension == 2) {
                if (v.y > -z) pos[1] = true;
                if (v.y < z) neg[1] = true;
            } else {
                pos[1] = neg[1] = true;
            }
        }
        candidate[bi] = pos[0] && neg[0] && pos[1] && neg[1];
    });
    for (size_t bi = 0; bi < cover.boxes.size(); ++bi) {
        if (!candidate[bi]) continue;
        ChartPoint p = cover.box_center(cover.boxes[bi]);
        if (!detail::newton_refine(sys, p, opt.tol_zero)) continue;
        sys.manifold.normalize(p);
        bool dup = false;
        for (const auto& z : zeros)
            if (sys.manifold.distance(z, p) < opt.dedup) dup = true;
        if (!dup) zeros.push_back(p);
    }
    // deterministic order before classification
    std::sort(zeros.begin(), zeros.end(), [&](const ChartPoint& a, const ChartPoint& b) {
        if (a.chart != b.chart) return a.chart < b.chart;
        if (a.x[0] != b.x[0]) return a.x[0] < b.x[0];
        return a.x[1] < b.x[1];
    });
    std::vector<FixedPointRecord> records;
    for (const auto& z : zeros) {
        FixedPointRecord rec = classify_fixed_point(sys, z, opt);
        rec.r_p = chart_ball_radius(sys, rec, default_ball_cap(sys, z));
        records.push_back(rec);
    }
    return records;
}

// ---------------------------------------------------------------------------
// local Morse energy function
// ---------------------------------------------------------------------------

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// phi_{p,c}(y) = c - sum_{i<=lambda} x_i^2 + sum_{i>lambda} x_i^2 in the
// (scaled) chart coordinates of the record.
struct LocalMorseChart {
    FixedPointRecord record;
    double c = 0;
    double scale = 1.0;

    double eval_eigen(const Vec2& x, int dimension) const {
        double phi = c;
        double q1 = x.x * x.x, q2 = x.y * x.y;
        if (dimension == 1) {
            return record.lambda >= 1 ? c - q1 : c + q1;
        }
        if (record.lambda == 0) phi += q1 + q2;
        else if (record.lambda == 2) phi -= q1 + q2;
        else phi += -q1 + q2;
        return phi;
    }

    double eval(const ManifoldSpec& m, const ChartPoint& y, bool checked = true) const {
        ChartPoint q = y;
        if (q.chart != record.location.chart) q = m.to_chart(q, record.location.chart);
        Vec2 d = m.displacement(record.location, q);
        if (checked && d.norm() > record.r_p * (1.0 + 1e-9))
            throw DomainError("local Morse chart: point outside the chart ball");
        return eval_eigen(record.frame.apply(d) * scale, m.dimension);
    }
};

inline LocalMorseChart local_morse(const FixedPointRecord& rec, double c, double scale = 1.0) {
    LocalMorseChart chart;
    chart.record = rec;
    chart.c = c;
    chart.scale = scale;
    return chart;
}

// ---------------------------------------------------------------------------
// invariant manifolds
// ---------------------------------------------------------------------------

struct ManifoldBranch {
    Vec2 direction;  // launch direction in chart coordinates
    TrajectorySegment curve;
    int limit_record = -1;  // record index the branch converges to, -1 if truncated
    bool left_domain = false;
};

struct InvariantManifoldTrace {
    int owner = -1;
    bool stable = false;
    std::vector<ManifoldBranch> branches;
};

struct TraceOptions {
    double offset = 1e-4;    // launch offset along the eigen-direction
    double arrive = 1e-3;    // termination distance to another fixed point
    double t_max = 100.0;
};

inline InvariantManifoldTrace trace_invariant_manifold(
    const std::vector<FixedPointRecord>& records, int owner, const FlowSystem& sys, bool stable,
    const TraceOptions& opt = {}) {
    const FixedPointRecord& rec = records[owner];
    const ManifoldSpec& m = sys.manifold;
    InvariantManifoldTrace trace;
    trace.owner = owner;
    trace.stable = stable;

    std::vector<Vec2> dirs;
    int dim_traced = stable ? m.dimension - rec.lambda : rec.lambda;
    if (m.dimension == 1) {
        if (dim_traced >= 1) dirs = {{1, 0}, {-1, 0}};
    } else {
        auto unit = [](Vec2 v) { return v / std::max(1e-300, v.norm()); };
        std::vector<Vec2> axes;
        if (stable) {
            if (rec.lambda <= 1) axes.push_back(unit(rec.axis_s));
            if (rec.lambda == 0) axes.push_back(unit(rec.axis_u));
        } else {
            if (rec.lambda >= 1) axes.push_back(unit(rec.axis_u));
            if (rec.lambda == 2) axes.push_back(unit(rec.axis_s));
        }
        for (const Vec2& a : axes) {
            dirs.push_back(a);
            dirs.push_back(a * -1.0);
        }
    }

    for (const Vec2& dir : dirs) {
        ManifoldBranch branch;
        branch.direction = dir;
        ChartPoint start = rec.location;
        start.x[0] += opt.offset * dir.x;
        start.x[1] += opt.offset * dir.y;
        m.normalize(start);
        branch.curve.forward = !stable;
        branch.curve.samples.push_back({0.0, start});
        IntegrateOptions iopt;
        try {
            integrate_steps(sys, start, stable ? -opt.t_max : opt.t_max, iopt,
                            [&](double, const ChartPoint&, double t1, const ChartPoint& p1) {
                                branch.curve.samples.push_back({t1, p1});
                                for (int r = 0; r < (int)records.size(); ++r) {
                                    if (r == owner) continue;
                                    if (m.distance(p1, records[r].location) < opt.arrive) {
                                        branch.limit_record = r;
                                        return false;
                                    }
                                }
                                return true;
                            });
        } catch (const IntegrationError&) {
            branch.left_domain = true;
        }
        for (auto& s : branch.curve.samples) m.normalize(s.point);
        trace.branches.push_back(std::move(branch));
    }
    return trace;
}

// Records serialized as structured text.
inline std::string fixed_point_report(const ManifoldSpec& m,
                                      const std::vector<FixedPointRecord>& records,
                                      const std::vector<InvariantManifoldTrace>* unstable = nullptr,
                                      const std::vector<InvariantManifoldTrace>* stable = nullptr) {
    std::ostringstream out;
    out << "# fixed points\ncount = " << records.size() << "\n";
    char buf[256];
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        std::snprintf(buf, sizeof buf,
                      "point %zu: chart=%d location=(%.12f,%.12f) kind=%s lambda=%d "
                      "re=(%.6g,%.6g)%s r_p=%.6g\n",
                      i, r.location.chart, r.location.x[0], r.location.x[1], kind_name(r.kind),
                      r.lambda, r.re_fast, r.re_slow, r.complex_pair ? " complex" : "", r.r_p);
        out << buf;
        auto emit_trace = [&](const InvariantManifoldTrace& t, const char* tag) {
            for (size_t b = 0; b < t.branches.size(); ++b) {
                const auto& br = t.branches[b];
                const ChartPoint& end = br.curve.endpoint();
                std::snprintf(buf, sizeof buf,
                              "  %s branch %zu: limit=%d end=(%.6f,%.6f)%s samples=%zu\n", tag, b,
                              br.limit_record, end.x[0], end.x[1],
                              br.left_domain ? " left_domain" : "", br.curve.samples.size());
                out << buf;
            }
        };
        if (unstable && i < unstable->size()) emit_trace((*unstable)[i], "unstable");
        if (stable && i < stable->size()) emit_trace((*stable)[i], "stable");
    }
    (void)m;
    return out.str();
}

}  // namespace energyforge

#endif
