#ifndef ENERGYFORGE_CHAIN_HPP
#define ENERGYFORGE_CHAIN_HPP

// Outer approximation of the chain recurrent set: box cover, single-step
// transition graph (edges are eps-chain steps of time tau), strongly connected
// components, chain components, and the combinatorial Lyapunov layering used
// as an oracle against the constructed energy function.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stack>
#include <vector>

#include "energyforge/integrator.hpp"
#include "energyforge/parallel.hpp"

namespace energyforge {

struct Box {
    int chart = 0;
    int i = 0, j = 0;
};

struct BoxCover {
    ManifoldSpec manifold;
    int resolution = 32;             // cells per axis per chart
    std::vector<Box> boxes;          // active boxes
    std::vector<std::vector<int>> cell_to_box;  // per chart, cell index -> box id (-1 inactive)
    double diameter = 0;             // max metric diameter over boxes

    double cell_size(int /*chart*/) const {
        switch (manifold.kind) {
            case ManifoldKind::Circle:
            case ManifoldKind::Torus: return 1.0 / resolution;
            case ManifoldKind::Sphere: return 2 * kSphereChartMax / resolution;
            case ManifoldKind::PlaneDisk: return 2 * manifold.radius / resolution;
        }
        return 0;
    }
    double origin(int /*chart*/) const {
        switch (manifold.kind) {
            case ManifoldKind::Circle:
            case ManifoldKind::Torus: return 0.0;
            case ManifoldKind::Sphere: return -kSphereChartMax;
            case ManifoldKind::PlaneDisk: return -manifold.radius;
        }
        return 0;
    }

    ChartPoint box_center(const Box& b) const {
        double h = cell_size(b.chart), o = origin(b.chart);
        if (manifold.dimension == 1) return ChartPoint(b.chart, o + (b.i + 0.5) * h);
        return ChartPoint(b.chart, o + (b.i + 0.5) * h, o + (b.j + 0.5) * h);
    }

    // Box containing the point (tries the other sphere chart when the point's
    // own cell is inactive); -1 when uncovered.
    int locate(const ChartPoint& p) const {
        for (int chart = 0; chart < manifold.chart_count(); ++chart) {
            ChartPoint q = p;
            if (q.chart != chart) {
                if (manifold.kind != ManifoldKind::Sphere) continue;
                if (q.vec().norm() < 1e-12) continue;
                q = manifold.to_chart(q, chart);
            }
            manifold.normalize(q);
            double h = cell_size(chart), o = origin(chart);
            int i = (int)std::floor((q.x[0] - o) / h);
            int j = manifold.dimension == 2 ? (int)std::floor((q.x[1] - o) / h) : 0;
            if (manifold.periodic()) {
                i = ((i % resolution) + resolution) % resolution;
                j = manifold.dimension == 2 ? ((j % resolution) + resolution) % resolution : 0;
            } else if (i < 0 || i >= resolution || j < 0 ||
                       (manifold.dimension == 2 && j >= resolution)) {
                continue;
            }
            int id = cell_to_box[chart][int64_t(j) * resolution + i];
            if (id >= 0) return id;
        }
        return -1;
    }

    // Clamps a sample into the manifold domain (covers overhang the boundary
    // of non-periodic charts by half a cell).
    ChartPoint clamp_to_domain(ChartPoint p) const {
        double limit = 0;
        if (manifold.kind == ManifoldKind::Sphere) limit = kSphereChartMax;
        else if (manifold.kind == ManifoldKind::PlaneDisk) limit = manifold.radius;
        else return p;
        if (manifold.dimension == 1) {
            p.x[0] = std::clamp(p.x[0], -limit, limit);
            return p;
        }
        double r = p.vec().norm();
        if (r > limit) {
            p.x[0] *= limit / r * (1 - 1e-12);
            p.x[1] *= limit / r * (1 - 1e-12);
        }
        return p;
    }

    std::vector<ChartPoint> box_samples(const Box& b, int samples_per_box) const {
        double h = cell_size(b.chart), o = origin(b.chart);
        std::vector<ChartPoint> out;
        int side = samples_per_box >= 9 ? 3 : 2;  // corners (+midpoints) plus center
        if (manifold.dimension == 1) {
            int pts = std::max(2, samples_per_box - 1);
            for (int a = 0; a < pts; ++a)
                out.push_back(clamp_to_domain(
                    ChartPoint(b.chart, o + (b.i + a / double(pts - 1)) * h)));
            out.push_back(clamp_to_domain(box_center(b)));
            return out;
        }
        for (int a = 0; a < side; ++a)
            for (int c = 0; c < side; ++c)
                out.push_back(clamp_to_domain(ChartPoint(b.chart,
                                                         o + (b.i + a / double(side - 1)) * h,
                                                         o + (b.j + c / double(side - 1)) * h)));
        if (side == 2) out.push_back(clamp_to_domain(box_center(b)));
        return out;
    }
};

inline BoxCover make_box_cover(const ManifoldSpec& m, int resolution) {
    BoxCover cover;
    cover.manifold = m;
    cover.resolution = resolution;
    int charts = m.chart_count();
    cover.cell_to_box.resize(charts);
    for (int chart = 0; chart < charts; ++chart) {
        double h = cover.cell_size(chart), o = cover.origin(chart);
        int ny = m.dimension == 1 ? 1 : resolution;
        cover.cell_to_box[chart].assign(int64_t(resolution) * ny, -1);
        double half_diag = 0.5 * h * (m.dimension == 1 ? 1.0 : std::sqrt(2.0));
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < resolution; ++i) {
                Vec2 center{o + (i + 0.5) * h, m.dimension == 1 ? 0.0 : o + (j + 0.5) * h};
                bool active = true;
                if (m.kind == ManifoldKind::Sphere)
                    active = center.norm() <= 1.0 + half_diag;
                else if (m.kind == ManifoldKind::PlaneDisk)
                    active = (m.dimension == 1 ? std::abs(center.x) : center.norm()) <=
                             m.radius + half_diag;
                if (!active) continue;
                cover.cell_to_box[chart][int64_t(j) * resolution + i] = (int)cover.boxes.size();
                cover.boxes.push_back({chart, i, j});
            }
        }
    }
    // metric diameter = max over boxes of the max corner-pair distance
    double diam = 0;
    for (const Box& b : cover.boxes) {
        auto corners = cover.box_samples(b, 4);
        for (size_t a = 0; a < corners.size(); ++a)
            for (size_t c = a + 1; c < corners.size(); ++c)
                diam = std::max(diam, m.distance(corners[a], corners[c]));
    }
    cover.diameter = diam;
    return cover;
}

struct TransitionGraph {
    BoxCover cover;
    double tau = 1.0;
    double eps = 0.0;
    std::vector<std::vector<int>> adj;  // successors, sorted unique
    int64_t edge_count() const {
        int64_t e = 0;
        for (const auto& a : adj) e += (int64_t)a.size();
        return e;
    }
};

namespace detail {

// Marks every active box whose cell AABB can meet the eps-ball around y.
inline void boxes_near(const BoxCover& cover, const ChartPoint& y, double eps,
                       std::vector<int>& out) {
    const ManifoldSpec& m = cover.manifold;
    for (int chart = 0; chart < m.chart_count(); ++chart) {
        ChartPoint p = y;
        if (chart != p.chart) {
            if (m.kind != ManifoldKind::Sphere) continue;
            if (p.vec().norm() < 1e-12) continue;  // opposite pole: not in this chart
            p = m.to_chart(p, chart);
            if (p.vec().norm() > kSphereChartMax + 1.0) continue;
        }
        m.normalize(p);
        double h = cover.cell_size(chart), o = cover.origin(chart);
        // chart-coordinate radius of the metric eps-ball (sphere charts shrink
        // lengths by 2/(1+r^2))
        double radius = eps;
        if (m.kind == ManifoldKind::Sphere)
            radius = eps * (1.0 + p.vec().norm2()) / 2.0 * 1.05;
        int res = cover.resolution;
        int ny = m.dimension == 1 ? 1 : res;
        int i0 = (int)std::floor((p.x[0] - radius - o) / h);
        int i1 = (int)std::floor((p.x[0] + radius - o) / h);
        int j0 = 0, j1 = 0;
        if (m.dimension == 2) {
            j0 = (int)std::floor((p.x[1] - radius - o) / h);
            j1 = (int)std::floor((p.x[1] + radius - o) / h);
        }
        for (int j = j0; j <= j1; ++j) {
            for (int i = i0; i <= i1; ++i) {
                int iw = i, jw = j;
                if (m.periodic()) {
                    iw = ((i % res) + res) % res;
                    jw = m.dimension == 2 ? ((j % res) + res) % res : 0;
                } else if (i < 0 || i >= res || j < 0 || (m.dimension == 2 && j >= ny)) {
                    continue;
                }
                int id = cover.cell_to_box[chart][int64_t(jw) * res + iw];
                if (id < 0) continue;
                // chart-coordinate AABB over-marks where the metric is
                // distorted (sphere); keep cells whose metric distance can
                // actually meet the eps-ball
                if (m.distance(y, cover.box_center(cover.boxes[id])) <=
                    eps + 0.51 * cover.diameter)
                    out.push_back(id);
            }
        }
    }
}

}  // namespace detail

// Edges are single eps-chain steps: b -> b' iff the eps-inflated f^tau image of
// some sample of b meets b'. Requires eps >= box diameter and tau >= 1 so that
// directed paths over-approximate eps-chains.
inline TransitionGraph build_transition_graph(const FlowSystem& sys, const BoxCover& cover,
                                              double tau, double eps, int samples_per_box) {
    if (tau < 1.0) throw std::invalid_argument("build_transition_graph: tau must be >= 1");
    if (eps < cover.diameter - 1e-12)
        throw std::invalid_argument("build_transition_graph: eps must be >= box diameter");
    if (samples_per_box < 4)
        throw std::invalid_argument("build_transition_graph: samples_per_box must be >= 4");
    TransitionGraph g;
    g.cover = cover;
    g.tau = tau;
    g.eps = eps;
    g.adj.resize(cover.boxes.size());
    std::exception_ptr error;
    parallel_for((int64_t)cover.boxes.size(), [&](int64_t bi) {
        std::vector<int> near;
        for (const ChartPoint& s : cover.box_samples(cover.boxes[bi], samples_per_box)) {
            ChartPoint img = flow_to(sys, s, tau);
            detail::boxes_near(cover, img, eps, near);
        }
        std::sort(near.begin(), near.end());
        near.erase(std::unique(near.begin(), near.end()), near.end());
        g.adj[bi] = std::move(near);
    });
    return g;
}

// ---------------------------------------------------------------------------
// graph analysis
// ---------------------------------------------------------------------------

// Iterative Tarjan SCC. Returns component id per node; ids are in reverse
// topological order of the condensation (successors have smaller ids).
inline std::vector<int> scc_decompose(const std::vector<std::vector<int>>& adj, int* count_out) {
    int n = (int)adj.size();
    std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
    std::vector<char> on_stack(n, 0);
    std::vector<int> stack;
    int next_index = 0, comp_count = 0;

    struct Frame {
        int v;
        size_t child;
    };
    for (int root = 0; root < n; ++root) {
        if (index[root] >= 0) continue;
        std::vector<Frame> frames{{root, 0}};
        index[root] = low[root] = next_index++;
        stack.push_back(root);
        on_stack[root] = 1;
        while (!frames.empty()) {
            Frame& f = frames.back();
            if (f.child < adj[f.v].size()) {
                int w = adj[f.v][f.child++];
                if (index[w] < 0) {
                    index[w] = low[w] = next_index++;
                    stack.push_back(w);
                    on_stack[w] = 1;
                    frames.push_back({w, 0});
                } else if (on_stack[w]) {
                    low[f.v] = std::min(low[f.v], index[w]);
                }
            } else {
                if (low[f.v] == index[f.v]) {
                    while (true) {
                        int w = stack.back();
                        stack.pop_back();
                        on_stack[w] = 0;
                        comp[w] = comp_count;
                        if (w == f.v) break;
                    }
                    ++comp_count;
                }
                int v = f.v;
                frames.pop_back();
                if (!frames.empty()) low[frames.back().v] = std::min(low[frames.back().v], low[v]);
            }
        }
    }
    if (count_out) *count_out = comp_count;
    return comp;
}

struct ChainAnalysis {
    std::vector<int> scc_id;        // per box
    int scc_count = 0;
    std::vector<char> recurrent;    // per box: lies on a directed cycle
    std::vector<int> component_id;  // per box, -1 off the recurrent set (merged components)
    int component_count = 0;
    std::vector<double> lyapunov;   // per box: condensation layer value
    std::vector<std::vector<int>> cond_adj;  // condensation DAG (scc -> scc)
    std::vector<int> scc_layer;     // per scc

    // reachability in the condensation DAG
    bool cond_reachable(int scc_from, int scc_to) const {
        if (scc_from == scc_to) return true;
        std::vector<char> seen(cond_adj.size(), 0);
        std::vector<int> stack{scc_from};
        seen[scc_from] = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            if (v == scc_to) return true;
            for (int w : cond_adj[v])
                if (!seen[w]) {
                    seen[w] = 1;
                    stack.push_back(w);
                }
        }
        return false;
    }
};

// Nodes contained in some SCC of size >= 2, or size 1 with a self-loop.
inline std::vector<char> recurrent_mask(const std::vector<std::vector<int>>& adj,
                                        const std::vector<int>& scc_id, int scc_count) {
    int n = (int)adj.size();
    std::vector<int> scc_size(scc_count, 0);
    for (int v = 0; v < n; ++v) ++scc_size[scc_id[v]];
    std::vector<char> rec(n, 0);
    for (int v = 0; v < n; ++v) {
        if (scc_size[scc_id[v]] >= 2) {
            rec[v] = 1;
        } else {
            for (int w : adj[v])
                if (w == v) rec[v] = 1;
        }
    }
    return rec;
}

inline ChainAnalysis analyze_graph(const TransitionGraph& g) {
    ChainAnalysis a;
    int n = (int)g.adj.size();
    a.scc_id = scc_decompose(g.adj, &a.scc_count);
    a.recurrent = recurrent_mask(g.adj, a.scc_id, a.scc_count);

    // condensation DAG
    a.cond_adj.assign(a.scc_count, {});
    for (int v = 0; v < n; ++v)
        for (int w : g.adj[v])
            if (a.scc_id[v] != a.scc_id[w]) a.cond_adj[a.scc_id[v]].push_back(a.scc_id[w]);
    for (auto& lst : a.cond_adj) {
        std::sort(lst.begin(), lst.end());
        lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
    }

    // layer = longest path length to a sink class; Tarjan ids are already
    // reverse-topological (every successor has a smaller id)
    a.scc_layer.assign(a.scc_count, 0);
    for (int c = 0; c < a.scc_count; ++c)
        for (int w : a.cond_adj[c]) a.scc_layer[c] = std::max(a.scc_layer[c], a.scc_layer[w] + 1);
    a.lyapunov.resize(n);
    for (int v = 0; v < n; ++v) a.lyapunov[v] = a.scc_layer[a.scc_id[v]];

    // merge recurrent SCCs by geometric adjacency (a fine grid can split one
    // physical component into several SCCs)
    const BoxCover& cover = g.cover;
    const ManifoldSpec& m = cover.manifold;
    std::vector<int> parent(n);
    for (int v = 0; v < n; ++v) parent[v] = v;
    std::function<int(int)> find = [&](int v) {
        while (parent[v] != v) v = parent[v] = parent[parent[v]];
        return v;
    };
    auto unite = [&](int x, int y) { parent[find(x)] = find(y); };

    int res = cover.resolution;
    auto box_at = [&](int chart, int i, int j) -> int {
        if (m.periodic()) {
            i = ((i % res) + res) % res;
            j = m.dimension == 2 ? ((j % res) + res) % res : 0;
        } else if (i < 0 || i >= res || j < 0 || (m.dimension == 2 && j >= res)) {
            return -1;
        }
        if (m.dimension == 1) j = 0;
        return cover.cell_to_box[chart][int64_t(j) * res + i];
    };
    for (int v = 0; v < n; ++v) {
        if (!a.recurrent[v]) continue;
        const Box& b = cover.boxes[v];
        const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < (m.dimension == 1 ? 2 : 4); ++k) {
            int w = box_at(b.chart, b.i + di[k], b.j + dj[k]);
            if (w >= 0 && a.recurrent[w]) unite(v, w);
        }
    }
    // cross-chart merge on the sphere: boxes whose centers nearly coincide
    if (m.kind == ManifoldKind::Sphere) {
        double near = 1.2 * cover.diameter;
        for (int v = 0; v < n; ++v) {
            if (!a.recurrent[v] || cover.boxes[v].chart != 0) continue;
            for (int w = 0; w < n; ++w) {
                if (!a.recurrent[w] || cover.boxes[w].chart != 1) continue;
                if (m.distance(cover.box_center(cover.boxes[v]),
                               cover.box_center(cover.boxes[w])) < near)
                    unite(v, w);
            }
        }
    }
    a.component_id.assign(n, -1);
    std::map<int, int> roots;
    for (int v = 0; v < n; ++v) {
        if (!a.recurrent[v]) continue;
        int r = find(v);
        auto [it, fresh] = roots.try_emplace(r, (int)roots.size());
        a.component_id[v] = it->second;
    }
    a.component_count = (int)roots.size();
    return a;
}

inline std::vector<int> chain_recurrent_boxes(const TransitionGraph& g) {
    int count = 0;
    auto scc = scc_decompose(g.adj, &count);
    auto rec = recurrent_mask(g.adj, scc, count);
    std::vector<int> out;
    for (int v = 0; v < (int)rec.size(); ++v)
        if (rec[v]) out.push_back(v);
    return out;
}

inline std::vector<std::vector<int>> chain_components(const TransitionGraph& g) {
    ChainAnalysis a = analyze_graph(g);
    std::vector<std::vector<int>> parts(a.component_count);
    for (int v = 0; v < (int)a.component_id.size(); ++v)
        if (a.component_id[v] >= 0) parts[a.component_id[v]].push_back(v);
    return parts;
}

inline std::vector<double> combinatorial_lyapunov(const TransitionGraph& g) {
    return analyze_graph(g).lyapunov;
}

// Structured-text report: counts, components with representatives, layers.
inline std::string chain_report(const TransitionGraph& g, const ChainAnalysis& a) {
    std::ostringstream out;
    char buf[128];
    out << "# chain recurrence analysis\n";
    out << "boxes = " << g.adj.size() << "\n";
    out << "edges = " << g.edge_count() << "\n";
    std::snprintf(buf, sizeof buf, "box_diameter = %.10g\ntau = %.10g\neps = %.10g\n",
                  g.cover.diameter, g.tau, g.eps);
    out << buf;
    int rec_count = 0;
    for (char r : a.recurrent) rec_count += r;
    out << "recurrent_boxes = " << rec_count << "\n";
    out << "chain_components = " << a.component_count << "\n";
    for (int c = 0; c < a.component_count; ++c) {
        int rep = -1;
        double layer = 0;
        int size = 0;
        for (int v = 0; v < (int)a.component_id.size(); ++v) {
            if (a.component_id[v] != c) continue;
            ++size;
            if (rep < 0) rep = v;
            layer = a.lyapunov[v];
        }
        ChartPoint p = g.cover.box_center(g.cover.boxes[rep]);
        std::snprintf(buf, sizeof buf,
                      "component %d: boxes=%d lyapunov=%.10g chart=%d representative=(%.6f,%.6f)\n",
                      c, size, layer, p.chart, p.x[0], p.x[1]);
        out << buf;
    }
    return out.str();
}

}  // namespace energyforge

#endif
