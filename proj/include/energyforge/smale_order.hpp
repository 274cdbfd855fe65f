#ifndef ENERGYFORGE_SMALE_ORDER_HPP
#define ENERGYFORGE_SMALE_ORDER_HPP

// The order relation p < q iff W^s_p meets W^u_q, computed with double
// confirmation (traced geometry + condensation reachability), and its total
// extension with sinks before saddles before sources.

#include <algorithm>
#include <optional>
#include <sstream>
#include <vector>

#include "energyforge/fixed_points.hpp"

namespace energyforge {

struct OrderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OrderEdge {
    int q = -1, p = -1;      // q -> p meaning p < q
    bool direct = false;      // witnessed by a traced branch
    bool transitive = false;  // composed from direct edges
    bool combinatorial = false;
};

struct OrderedSpectrum {
    std::vector<FixedPointRecord> records;
    std::vector<InvariantManifoldTrace> unstable;  // per record
    std::vector<InvariantManifoldTrace> stable;    // per record
    std::vector<std::vector<int>> dag;             // dag[q] = sorted {p : p < q, p != q}
    std::vector<OrderEdge> edges;
    std::vector<OrderEdge> ambiguous;              // geometric without combinatorial backing
    std::vector<int> order;                        // record ids p_1..p_k
    std::vector<int> stage_of;                     // record id -> 1-based stage

    int k() const { return (int)order.size(); }
    int record_at_stage(int i) const { return order[i - 1]; }  // i in 1..k

    // A_i: records whose unstable sets the first i stages accumulate
    std::vector<int> prefix_A(int i) const {
        return std::vector<int>(order.begin(), order.begin() + i);
    }
    // R_i: records j > i whose stable sets the stage-i region must avoid
    std::vector<int> suffix_R(int i) const {
        return std::vector<int>(order.begin() + i, order.end());
    }
};

namespace detail {

inline double branch_to_trace_distance(const ManifoldSpec& m, const ManifoldBranch& branch,
                                       const InvariantManifoldTrace& target,
                                       const ChartPoint& target_location) {
    double best = std::numeric_limits<double>::infinity();
    size_t jstep = std::max<size_t>(1, branch.curve.samples.size() / 600);
    for (size_t j = 0; j < branch.curve.samples.size(); j += jstep)
        best = std::min(best, m.distance(branch.curve.samples[j].point, target_location));
    for (const auto& tb : target.branches) {
        size_t istep = std::max<size_t>(1, tb.curve.samples.size() / 600);
        for (size_t i = 0; i < tb.curve.samples.size(); i += istep)
            for (size_t j = 0; j < branch.curve.samples.size(); j += jstep)
                best = std::min(best, m.distance(branch.curve.samples[j].point,
                                                 tb.curve.samples[i].point));
    }
    return best;
}

}  // namespace detail

// Edge q -> p iff a traced unstable branch of q reaches the stable set of p
// (within eps_rel = 2 * box diameter, or terminating at p) AND the
// condensation DAG connects their components. Geometric hits without
// combinatorial backing are reported as ambiguous and excluded; the
// combinatorial no is definite because the box graph over-approximates.
inline OrderedSpectrum compute_relation(const FlowSystem& sys,
                                        std::vector<FixedPointRecord> records,
                                        std::vector<InvariantManifoldTrace> unstable,
                                        std::vector<InvariantManifoldTrace> stable,
                                        const TransitionGraph& graph,
                                        const ChainAnalysis& analysis) {
    OrderedSpectrum spec;
    spec.records = std::move(records);
    spec.unstable = std::move(unstable);
    spec.stable = std::move(stable);
    int n = (int)spec.records.size();
    const ManifoldSpec& m = sys.manifold;
    double eps_rel = 2.0 * graph.cover.diameter;

    std::vector<int> scc_of(n, -1);
    for (int i = 0; i < n; ++i) {
        int box = graph.cover.locate(spec.records[i].location);
        if (box < 0) throw OrderError("fixed point outside the box cover");
        scc_of[i] = analysis.scc_id[box];
    }

    // direct geometric evidence
    std::vector<std::vector<char>> direct(n, std::vector<char>(n, 0));
    for (int q = 0; q < n; ++q) {
        for (const auto& branch : spec.unstable[q].branches) {
            for (int p = 0; p < n; ++p) {
                if (p == q) continue;
                if (branch.limit_record == p) {
                    direct[q][p] = 1;
                    continue;
                }
                if (spec.records[p].kind == PointKind::Sink) continue;  // basin needs the limit
                double d = detail::branch_to_trace_distance(m, branch, spec.stable[p],
                                                            spec.records[p].location);
                if (d < eps_rel) direct[q][p] = 1;
            }
        }
    }

    // combinatorial confirmation + transitive closure of confirmed edges
    std::vector<std::vector<char>> confirmed(n, std::vector<char>(n, 0));
    for (int q = 0; q < n; ++q)
        for (int p = 0; p < n; ++p) {
            if (p == q || !direct[q][p]) continue;
            if (analysis.cond_reachable(scc_of[q], scc_of[p])) {
                confirmed[q][p] = 1;
            } else {
                OrderEdge e;
                e.q = q;
                e.p = p;
                e.direct = true;
                spec.ambiguous.push_back(e);
            }
        }
    std::vector<std::vector<char>> closed = confirmed;
    for (int mid = 0; mid < n; ++mid)
        for (int q = 0; q < n; ++q)
            for (int p = 0; p < n; ++p)
                if (closed[q][mid] && closed[mid][p]) closed[q][p] = 1;

    spec.dag.assign(n, {});
    for (int q = 0; q < n; ++q) {
        for (int p = 0; p < n; ++p) {
            if (p == q || !closed[q][p]) continue;
            spec.dag[q].push_back(p);
            OrderEdge e;
            e.q = q;
            e.p = p;
            e.direct = confirmed[q][p];
            e.transitive = !confirmed[q][p];
            e.combinatorial = analysis.cond_reachable(scc_of[q], scc_of[p]);
            spec.edges.push_back(e);
        }
    }
    return spec;
}

// Total extension: topological order of the relation constrained so that sinks
// precede saddles precede sources; ties broken by (lambda, location).
inline void linear_extension(OrderedSpectrum& spec) {
    int n = (int)spec.records.size();
    // cycle check: p < q and q < p simultaneously breaks the class assumptions
    for (int q = 0; q < n; ++q)
        for (int p : spec.dag[q])
            for (int r : spec.dag[p])
                if (r == q)
                    throw OrderError("order relation has a cycle: the flow violates the "
                                     "finite-hyperbolic assumptions");

    auto klass = [&](int i) {
        switch (spec.records[i].kind) {
            case PointKind::Sink: return 0;
            case PointKind::Saddle: return 1;
            case PointKind::Source: return 2;
        }
        return 3;
    };
    auto tie_key = [&](int i) {
        const auto& r = spec.records[i];
        return std::tuple<int, int, double, double>(r.lambda, r.location.chart, r.location.x[0],
                                                    r.location.x[1]);
    };
    // cross-class edges are honored by the class strata automatically (the
    // relation never points from a lower class to a strictly higher one)
    for (int q = 0; q < n; ++q)
        for (int p : spec.dag[q])
            if (klass(p) > klass(q))
                throw OrderError("order edge points against the sink/saddle/source strata");

    spec.order.clear();
    for (int cls = 0; cls <= 2; ++cls) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i)
            if (klass(i) == cls) members.push_back(i);
        std::vector<char> placed(n, 0);
        size_t remaining = members.size();
        while (remaining > 0) {
            int pick = -1;
            for (int i : members) {
                if (placed[i]) continue;
                bool ready = true;
                for (int p : spec.dag[i])  // i depends on its predecessors p
                    if (klass(p) == cls && !placed[p]) ready = false;
                if (!ready) continue;
                if (pick < 0 || tie_key(i) < tie_key(pick)) pick = i;
            }
            if (pick < 0) throw OrderError("cycle within a kind class");
            placed[pick] = 1;
            spec.order.push_back(pick);
            --remaining;
        }
    }
    spec.stage_of.assign(n, 0);
    for (int s = 0; s < n; ++s) spec.stage_of[spec.order[s]] = s + 1;
}

inline std::string order_report(const FlowSystem& sys, const OrderedSpectrum& spec) {
    std::ostringstream out;
    out << "# smale order\n";
    out << "points = " << spec.records.size() << "\n";
    out << "edges = " << spec.edges.size() << "\n";
    char buf[256];
    for (const auto& e : spec.edges) {
        std::snprintf(buf, sizeof buf, "edge: %d -> %d evidence=%s combinatorial=%s\n", e.q, e.p,
                      e.direct ? "direct" : "transitive", e.combinatorial ? "yes" : "no");
        out << buf;
    }
    for (const auto& e : spec.ambiguous) {
        std::snprintf(buf, sizeof buf, "ambiguous: %d -> %d (geometric only, dropped)\n", e.q,
                      e.p);
        out << buf;
    }
    out << "order:";
    for (int id : spec.order) out << " " << id;
    out << "\n";
    for (size_t s = 0; s < spec.order.size(); ++s) {
        const auto& r = spec.records[spec.order[s]];
        std::snprintf(buf, sizeof buf, "p_%zu: record=%d kind=%s lambda=%d location=(%.9f,%.9f)\n",
                      s + 1, spec.order[s], kind_name(r.kind), r.lambda, r.location.x[0],
                      r.location.x[1]);
        out << buf;
    }
    (void)sys;
    return out.str();
}

}  // namespace energyforge

#endif
