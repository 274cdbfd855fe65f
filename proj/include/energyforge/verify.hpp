#ifndef ENERGYFORGE_VERIFY_HPP
#define ENERGYFORGE_VERIFY_HPP

// Numerical verification of the constructed energy function: monotone decrease
// along orbits, critical structure (quadratic signature at fixed points,
// regular gradients elsewhere), the Euler-characteristic corollary, the
// manifold decomposition into invariant sets, and cross-checks against the
// combinatorial Lyapunov oracle.

#include <algorithm>
#include <random>
#include <sstream>

#include "energyforge/builder.hpp"
#include "energyforge/verify_constants.hpp"

namespace energyforge {

struct CheckSection {
    std::string name;
    bool passed = false;
    std::string details;
};

struct MorseCheckReport {
    std::vector<CheckSection> sections;
    uint64_t seed = 0;

    bool all_passed() const {
        for (const auto& s : sections)
            if (!s.passed) return false;
        return true;
    }
    std::string text() const {
        std::ostringstream out;
        out << "# morse check report\nseed = " << seed << "\n";
        for (const auto& s : sections) {
            out << "check " << s.name << ": " << (s.passed ? "pass" : "FAIL") << "\n";
            out << s.details;
        }
        out << "result = " << (all_passed() ? "pass" : "FAIL") << "\n";
        return out.str();
    }
};

namespace detail {

// uniform sample on the manifold (chart-aware), rejecting inactive spots
inline ChartPoint sample_point(const ManifoldSpec& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int tries = 0; tries < 64; ++tries) {
        switch (m.kind) {
            case ManifoldKind::Circle: return ChartPoint(0, u(rng));
            case ManifoldKind::Torus: return ChartPoint(0, u(rng), u(rng));
            case ManifoldKind::Sphere: {
                int chart = u(rng) < 0.5 ? 0 : 1;
                double x = 2.0 * (2 * u(rng) - 1), y = 2.0 * (2 * u(rng) - 1);
                ChartPoint p(chart, x, y);
                if (p.vec().norm() <= 1.0) return p;
                break;
            }
            case ManifoldKind::PlaneDisk: {
                double x = m.radius * (2 * u(rng) - 1), y = m.radius * (2 * u(rng) - 1);
                ChartPoint p(0, x, m.dimension == 1 ? 0.0 : y);
                if (m.dimension == 1 ? std::abs(p.x[0]) <= m.radius : p.vec().norm() <= m.radius)
                    return p;
                break;
            }
        }
    }
    return ChartPoint(0, 0.25, 0.25);
}

}  // namespace detail

// phi(f^t(x)) < phi(x) beyond tolerance kMonotoneTolAbs + kMonotoneTolGrid*h for
// samples at distance > 3h from every fixed point.
inline CheckSection check_monotone(const EnergyField& field, const FlowSystem& sys,
                                   const std::vector<FixedPointRecord>& records, int n_samples,
                                   uint64_t seed) {
    CheckSection sec;
    sec.name = "monotone";
    std::mt19937_64 rng(seed);
    double h = field.grid.spacing();
    double tol = kMonotoneTolAbs + kMonotoneTolGrid * h;
    int violations = 0, tested = 0;
    double worst = 0;
    while (tested < n_samples) {
        ChartPoint x = detail::sample_point(sys.manifold, rng);
        bool near = false;
        for (const auto& r : records)
            if (sys.manifold.distance(x, r.location) < 3 * h) near = true;
        if (near) continue;
        ++tested;
        double phi0 = eval_energy(field, sys.manifold, x);
        if (std::isnan(phi0)) {
            ++violations;
            continue;
        }
        for (double t : {0.1, 0.5, 1.0}) {
            double phi1 = eval_energy(field, sys.manifold, flow_to(sys, x, t));
            if (std::isnan(phi1) || phi1 - phi0 > -(-tol)) {
                // strict decrease is required beyond the tolerance
                if (std::isnan(phi1) || phi1 > phi0 - (-tol) * 0) {
                }
            }
            if (std::isnan(phi1) || phi1 >= phi0 + tol) {
                ++violations;
                worst = std::max(worst, phi1 - phi0);
                break;
            }
            // decrease must also be genuine over the horizon
            if (t == 1.0 && phi1 >= phi0) {
                ++violations;
                worst = std::max(worst, phi1 - phi0);
            }
            phi0 = std::min(phi0, phi0);  // keep phi0 fixed per t (compare to start)
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "samples = %d\nviolations = %d\ntolerance = %.6g\nworst = %.6g\n",
                  tested, violations, tol, worst);
    sec.details = buf;
    sec.passed = violations == 0;
    return sec;
}

// Quadratic least-squares fit on the 5h-ball around each fixed point: the
// signature index must equal lambda with small residual; random regular points
// must show a central-difference gradient above kRegularGradFraction of the
// median.
inline CheckSection check_critical_structure(const EnergyField& field, const FlowSystem& sys,
                                             const std::vector<FixedPointRecord>& records,
                                             uint64_t seed) {
    CheckSection sec;
    sec.name = "critical_structure";
    std::ostringstream det;
    bool ok = true;
    double h = field.grid.spacing();
    const ManifoldSpec& m = sys.manifold;

    for (size_t rid = 0; rid < records.size(); ++rid) {
        const auto& rec = records[rid];
        // gather nodes within 5h of the point (its own chart)
        std::vector<std::array<double, 3>> pts;  // dx, dy, value
        const GridChart& c = field.grid.charts[rec.location.chart];
        ChartPoint loc = rec.location;
        int ci = (int)std::round((loc.x[0] - c.x0) / c.h);
        int cj = m.dimension == 2 ? (int)std::round((loc.x[1] - c.y0) / c.h) : 0;
        int w = 5;
        for (int dj = -w; dj <= w; ++dj) {
            for (int di = -w; di <= w; ++di) {
                int i = c.wrap_i(ci + di), j = c.wrap_j(cj + dj);
                if (!c.node_valid(i, j)) continue;
                double v = field.phi.get(field.grid, rec.location.chart, i, j);
                if (std::isnan(v)) continue;
                Vec2 d{c.position(i, j).x - loc.x[0], c.position(i, j).y - loc.x[1]};
                if (m.periodic()) {
                    d.x -= std::round(d.x);
                    d.y -= std::round(d.y);
                }
                if (d.norm() > 5 * h + 1e-12) continue;
                pts.push_back({d.x, d.y, v});
            }
        }
        // least squares v ~ a + bx + cy + dxx x^2 + dxy xy + dyy y^2
        int terms = m.dimension == 1 ? 3 : 6;
        std::vector<double> ata(terms * terms, 0.0), atb(terms, 0.0);
        auto basis = [&](double x, double y, double* row) {
            row[0] = 1;
            row[1] = x;
            row[2] = m.dimension == 1 ? x * x : y;
            if (m.dimension == 2) {
                row[3] = x * x;
                row[4] = x * y;
                row[5] = y * y;
            }
        };
        double row[6];
        for (const auto& p : pts) {
            basis(p[0], p[1], row);
            for (int a = 0; a < terms; ++a) {
                atb[a] += row[a] * p[2];
                for (int b = 0; b < terms; ++b) ata[a * terms + b] += row[a] * row[b];
            }
        }
        // solve by Gaussian elimination
        std::vector<double> sol(atb);
        {
            std::vector<double> A(ata);
            for (int col = 0; col < terms; ++col) {
                int piv = col;
                for (int r = col + 1; r < terms; ++r)
                    if (std::abs(A[r * terms + col]) > std::abs(A[piv * terms + col])) piv = r;
                for (int b = 0; b < terms; ++b) std::swap(A[col * terms + b], A[piv * terms + b]);
                std::swap(sol[col], sol[piv]);
                double d = A[col * terms + col];
                if (std::abs(d) < 1e-300) continue;
                for (int r = 0; r < terms; ++r) {
                    if (r == col) continue;
                    double f = A[r * terms + col] / d;
                    for (int b = col; b < terms; ++b) A[r * terms + b] -= f * A[col * terms + b];
                    sol[r] -= f * sol[col];
                }
            }
            for (int col = 0; col < terms; ++col) {
                double d = A[col * terms + col];
                sol[col] = std::abs(d) > 1e-300 ? sol[col] / d : 0.0;
            }
        }
        // residual and signature
        double rss = 0, scale = 1;
        for (const auto& p : pts) {
            basis(p[0], p[1], row);
            double fit = 0;
            for (int a = 0; a < terms; ++a) fit += row[a] * sol[a];
            rss += (fit - p[2]) * (fit - p[2]);
            scale = std::max(scale, std::abs(p[2]));
        }
        double residual = pts.empty() ? 1e9 : std::sqrt(rss / pts.size());
        int nu = 0;
        double min_abs_eig = 0;
        if (m.dimension == 1) {
            nu = sol[2] < 0 ? 1 : 0;
            min_abs_eig = std::abs(sol[2]);
        } else {
            Mat2 H{2 * sol[3], sol[4], sol[4], 2 * sol[5]};
            Eigen2 eig = eigen2(H);
            nu = (eig.re1 < 0) + (eig.re2 < 0);
            min_abs_eig = std::min(std::abs(eig.re1), std::abs(eig.re2));
        }
        bool point_ok = nu == rec.lambda && residual < kCriticalFitResidual * scale &&
                        min_abs_eig > kCriticalMinEig;
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "point %zu: nu = %d (lambda = %d) residual = %.3g scale = %.3g "
                      "min|eig| = %.3g %s\n",
                      rid, nu, rec.lambda, residual, scale, min_abs_eig,
                      point_ok ? "ok" : "BAD");
        det << buf;
        ok = ok && point_ok;
    }

    // regular points: central-difference gradients bounded below
    std::mt19937_64 rng(seed + 1);
    std::vector<double> grads;
    double hstep = 2 * h;
    for (int s = 0; s < 200; ++s) {
        ChartPoint p = detail::sample_point(m, rng);
        bool near = false;
        for (const auto& r : records)
            if (m.distance(p, r.location) < 6 * h) near = true;
        if (near) {
            --s;
            continue;
        }
        auto shift = [&](double dx, double dy) {
            ChartPoint q = p;
            q.x[0] += dx;
            q.x[1] += dy;
            m.normalize(q);
            return eval_energy(field, m, q);
        };
        double gx = (shift(hstep, 0) - shift(-hstep, 0)) / (2 * hstep);
        double gy = m.dimension == 2 ? (shift(0, hstep) - shift(0, -hstep)) / (2 * hstep) : 0.0;
        if (std::isnan(gx) || std::isnan(gy)) continue;
        grads.push_back(std::sqrt(gx * gx + gy * gy));
    }
    std::sort(grads.begin(), grads.end());
    double median = grads.empty() ? 0 : grads[grads.size() / 2];
    double gmin = kRegularGradFraction * median;
    int weak = 0;
    for (double g : grads)
        if (g < gmin) ++weak;
    char buf[120];
    std::snprintf(buf, sizeof buf, "regular samples = %zu median|grad| = %.4g weak = %d\n",
                  grads.size(), median, weak);
    det << buf;
    ok = ok && weak == 0 && !grads.empty();

    sec.details = det.str();
    sec.passed = ok;
    return sec;
}

// Euler characteristic corollary: sum of (-1)^lambda equals chi(M).
inline CheckSection check_euler(const std::vector<FixedPointRecord>& records,
                                const ManifoldSpec& m) {
    CheckSection sec;
    sec.name = "euler";
    int sum = 0;
    for (const auto& r : records) sum += (r.lambda % 2 == 0) ? 1 : -1;
    int chi = 0;
    switch (m.kind) {
        case ManifoldKind::Sphere: chi = 2; break;
        case ManifoldKind::Torus:
        case ManifoldKind::Circle: chi = 0; break;
        case ManifoldKind::PlaneDisk: chi = 1; break;
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "sum(-1)^lambda = %d chi = %d\n", sum, chi);
    sec.details = buf;
    sec.passed = sum == chi;
    return sec;
}

// Theorem-2-style decomposition: every grid node converges forward and
// backward to fixed points within t = 100 (original time scale).
inline CheckSection check_decomposition(const EnergyField& field, const FlowSystem& sys,
                                        const std::vector<FixedPointRecord>& records,
                                        int max_nodes = 0) {
    CheckSection sec;
    sec.name = "decomposition";
    const ManifoldSpec& m = sys.manifold;
    std::vector<ChartPoint> nodes;
    for (int chart = 0; chart < (int)field.grid.charts.size(); ++chart) {
        const GridChart& c = field.grid.charts[chart];
        for (int j = 0; j < c.ny; ++j)
            for (int i = 0; i < c.nx; ++i)
                if (field.grid.node_owned(chart, i, j)) nodes.push_back(field.grid.node_point(chart, i, j));
    }
    if (max_nodes > 0 && (int)nodes.size() > max_nodes) {
        std::vector<ChartPoint> sub;
        size_t step = nodes.size() / max_nodes + 1;
        for (size_t s = 0; s < nodes.size(); s += step) sub.push_back(nodes[s]);
        nodes = std::move(sub);
    }
    std::atomic<int64_t> fails(0);
    parallel_for((int64_t)nodes.size(), [&](int64_t ni) {
        for (bool forward : {true, false}) {
            bool converged = false;
            try {
                IntegrateOptions opt;
                integrate_steps(sys, nodes[ni], forward ? 100.0 : -100.0, opt,
                                [&](double, const ChartPoint&, double, const ChartPoint& p1) {
                                    for (const auto& r : records)
                                        if (m.distance(p1, r.location) < 1e-3) {
                                            converged = true;
                                            return false;
                                        }
                                    return true;
                                });
            } catch (const IntegrationError&) {
            }
            if (!converged) {
                // the node may itself be a fixed point
                bool at_fp = false;
                for (const auto& r : records)
                    if (m.distance(nodes[ni], r.location) < 1e-3) at_fp = true;
                if (!at_fp) ++fails;
            }
        }
    });
    double frac = nodes.empty() ? 1.0 : double(fails.load()) / (2.0 * nodes.size());
    char buf[120];
    std::snprintf(buf, sizeof buf, "nodes = %zu nonconvergent = %lld fraction = %.5f\n",
                  nodes.size(), (long long)fails.load(), frac);
    sec.details = buf;
    sec.passed = frac <= 1e-3;
    return sec;
}

// Combinatorial Lyapunov oracle cross-check: for sampled pairs (x, f^1(x)) in
// distinct condensation classes, the layer order never contradicts phi.
inline CheckSection cross_check_oracle(const EnergyField& field, const FlowSystem& sys,
                                       const TransitionGraph& graph, const ChainAnalysis& analysis,
                                       int n_pairs, uint64_t seed) {
    CheckSection sec;
    sec.name = "oracle";
    std::mt19937_64 rng(seed + 2);
    int contradictions = 0, compared = 0, exempt = 0;
    for (int s = 0; s < n_pairs; ++s) {
        ChartPoint x = detail::sample_point(sys.manifold, rng);
        ChartPoint y;
        try {
            y = flow_to(sys, x, 1.0);
        } catch (const IntegrationError&) {
            ++exempt;
            continue;
        }
        int bx = graph.cover.locate(x), by = graph.cover.locate(y);
        if (bx < 0 || by < 0) {
            ++exempt;
            continue;
        }
        int cx = analysis.scc_id[bx], cy = analysis.scc_id[by];
        if (cx == cy) {
            ++exempt;
            continue;
        }
        ++compared;
        double lx = analysis.scc_layer[cx], ly = analysis.scc_layer[cy];
        double px = eval_energy(field, sys.manifold, x), py = eval_energy(field, sys.manifold, y);
        // the flow decreases both the layer and phi; a contradiction is an
        // opposite strict order
        if ((lx > ly && px < py) || (lx < ly && px > py)) ++contradictions;
    }
    char buf[120];
    std::snprintf(buf, sizeof buf, "pairs = %d compared = %d exempt = %d contradictions = %d\n",
                  n_pairs, compared, exempt, contradictions);
    sec.details = buf;
    sec.passed = contradictions == 0 && compared > 0;
    return sec;
}

struct VerifyInputs {
    const EnergyField* field = nullptr;
    const FlowSystem* sys = nullptr;
    const std::vector<FixedPointRecord>* records = nullptr;
    const TransitionGraph* graph = nullptr;
    const ChainAnalysis* analysis = nullptr;
    int monotone_samples = 1000;
    int oracle_pairs = 10000;
    int decomposition_nodes = 4000;
    uint64_t seed = 1;
};

inline MorseCheckReport run_verification(const VerifyInputs& in) {
    MorseCheckReport rep;
    rep.seed = in.seed;
    rep.sections.push_back(
        check_monotone(*in.field, *in.sys, *in.records, in.monotone_samples, in.seed));
    rep.sections.push_back(check_critical_structure(*in.field, *in.sys, *in.records, in.seed));
    rep.sections.push_back(check_euler(*in.records, in.sys->manifold));
    rep.sections.push_back(
        check_decomposition(*in.field, *in.sys, *in.records, in.decomposition_nodes));
    if (in.graph && in.analysis)
        rep.sections.push_back(
            cross_check_oracle(*in.field, *in.sys, *in.graph, *in.analysis, in.oracle_pairs,
                               in.seed));
    return rep;
}

}  // namespace energyforge

#endif
