#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "energyforge/chain.hpp"
#include "energyforge/flowspec.hpp"

using namespace energyforge;

namespace {

// Abstract graph wrapped in a TransitionGraph over a 1-D dummy cover; box i
// sits at cell `positions[i]` so geometric adjacency is controllable.
TransitionGraph abstract_graph(const std::vector<std::vector<int>>& adj,
                               const std::vector<int>& positions) {
    TransitionGraph g;
    g.cover.manifold.kind = ManifoldKind::PlaneDisk;
    g.cover.manifold.dimension = 1;
    g.cover.manifold.radius = 100.0;
    g.cover.resolution = 400;
    g.cover.cell_to_box.resize(1);
    g.cover.cell_to_box[0].assign(400, -1);
    for (size_t b = 0; b < positions.size(); ++b) {
        g.cover.cell_to_box[0][positions[b]] = (int)b;
        g.cover.boxes.push_back({0, positions[b], 0});
    }
    g.cover.diameter = g.cover.cell_size(0);
    g.adj = adj;
    g.eps = g.cover.diameter;
    return g;
}

// Brute-force chain recurrence oracle: x is recurrent iff a directed path of
// length >= 1 leads from x back to x.
std::vector<int> brute_recurrent(const std::vector<std::vector<int>>& adj) {
    int n = (int)adj.size();
    std::vector<int> out;
    for (int x = 0; x < n; ++x) {
        std::vector<char> seen(n, 0);
        std::vector<int> stack(adj[x]);
        for (int w : adj[x]) seen[w] = 1;
        bool hit = false;
        while (!stack.empty() && !hit) {
            int v = stack.back();
            stack.pop_back();
            if (v == x) hit = true;
            for (int w : adj[v])
                if (!seen[w]) {
                    seen[w] = 1;
                    stack.push_back(w);
                }
        }
        if (hit) out.push_back(x);
    }
    return out;
}

}  // namespace

TEST_CASE("zero field: every box carries a self-loop") {
    FlowSystem sys = flow_from_spec_text(
        "manifold.kind = torus\nfield.expressions.0 = 0, 0\n");
    BoxCover cover = make_box_cover(sys.manifold, 6);
    TransitionGraph g = build_transition_graph(sys, cover, 1.0, cover.diameter, 5);
    for (size_t b = 0; b < g.adj.size(); ++b) {
        bool self = false;
        for (int w : g.adj[b]) self |= (w == (int)b);
        CHECK(self);
    }
}

TEST_CASE("1-D contraction: all edges point toward the two middle boxes") {
    FlowSystem sys = flow_from_spec_text(
        "manifold.kind = plane-disk\nmanifold.dimension = 1\nmanifold.radius = 1\n"
        "field.expressions.0 = -x\n");
    BoxCover cover = make_box_cover(sys.manifold, 8);
    REQUIRE(cover.boxes.size() == 8);
    double eps = cover.diameter;
    TransitionGraph g = build_transition_graph(sys, cover, 1.0, eps, 4);

    // independent oracle: direct image computation per box
    const double h = 0.25;
    for (int b = 0; b < 8; ++b) {
        std::set<int> expect;
        double lo = -1.0 + b * h, hi = lo + h;
        for (double s : {lo, 0.5 * (lo + hi), hi}) {
            double img = s * std::exp(-1.0);
            int first = (int)std::floor((img - eps + 1.0) / h);
            int last = (int)std::floor((img + eps + 1.0) / h);
            for (int t = std::max(0, first); t <= std::min(7, last); ++t) expect.insert(t);
        }
        std::set<int> got(g.adj[b].begin(), g.adj[b].end());
        CHECK(got == expect);
        for (int w : g.adj[b])  // edges never point outward
            CHECK(std::abs(cover.box_center(cover.boxes[w]).x[0]) <=
                  std::abs(cover.box_center(cover.boxes[b]).x[0]) + eps + 1e-12);
    }
}

TEST_CASE("graph preconditions are enforced") {
    FlowSystem sys = catalog_flow("torus_height_gradient");
    BoxCover cover = make_box_cover(sys.manifold, 8);
    CHECK_THROWS_AS(build_transition_graph(sys, cover, 0.5, cover.diameter, 5),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_transition_graph(sys, cover, 1.0, cover.diameter * 0.5, 5),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_transition_graph(sys, cover, 1.0, cover.diameter, 3),
                    std::invalid_argument);
}

TEST_CASE("path graph has no recurrent boxes, 2-cycle has two") {
    TransitionGraph path = abstract_graph({{1}, {2}, {}}, {0, 10, 20});
    CHECK(chain_recurrent_boxes(path).empty());

    TransitionGraph cyc = abstract_graph({{1}, {0}, {}}, {0, 10, 20});
    auto rec = chain_recurrent_boxes(cyc);
    CHECK(rec == std::vector<int>{0, 1});
}

TEST_CASE("chain components partition and merge by adjacency") {
    // one 2-cycle on adjacent cells -> one component
    TransitionGraph one = abstract_graph({{1}, {0}}, {5, 6});
    auto parts = chain_components(one);
    REQUIRE(parts.size() == 1);
    CHECK(parts[0].size() == 2);

    // two 2-cycles far apart -> two components
    TransitionGraph two = abstract_graph({{1}, {0}, {3}, {2}}, {5, 6, 300, 301});
    CHECK(chain_components(two).size() == 2);

    // a fine grid can split one physical cluster into SCCs: two mutually
    // unreachable self-loops on adjacent cells still merge geometrically
    TransitionGraph split = abstract_graph({{0}, {1}}, {7, 8});
    CHECK(chain_components(split).size() == 1);
}

TEST_CASE("combinatorial Lyapunov layering") {
    // condensation chain a -> b -> c gives values 2, 1, 0
    TransitionGraph chain = abstract_graph({{1}, {2}, {}}, {0, 10, 20});
    auto lyap = combinatorial_lyapunov(chain);
    CHECK(lyap[0] == 2.0);
    CHECK(lyap[1] == 1.0);
    CHECK(lyap[2] == 0.0);

    // single component: constant 0
    TransitionGraph cyc = abstract_graph({{1}, {0}}, {0, 10});
    auto l2 = combinatorial_lyapunov(cyc);
    CHECK(l2[0] == 0.0);
    CHECK(l2[1] == 0.0);

    // equal values within a component, strictly decreasing across classes
    TransitionGraph mix = abstract_graph({{1, 2}, {0}, {3}, {2, 3}}, {0, 10, 20, 30});
    auto l3 = combinatorial_lyapunov(mix);
    CHECK(l3[0] == l3[1]);
    CHECK(l3[0] > l3[2]);
    CHECK(l3[2] == l3[3]);  // {2,3} mutually reachable
}

TEST_CASE("sphere north-south: recurrent boxes only at the poles") {
    FlowSystem sys = catalog_flow("sphere_north_south");
    BoxCover cover = make_box_cover(sys.manifold, 32);
    TransitionGraph g = build_transition_graph(sys, cover, 1.0, cover.diameter, 5);
    auto rec = chain_recurrent_boxes(g);
    REQUIRE(!rec.empty());
    for (int b : rec) {
        ChartPoint c = cover.box_center(cover.boxes[b]);
        // pole in the box's own chart is the chart origin
        CHECK(c.vec().norm() < 3.0 * cover.diameter);
    }
    // brute-force oracle agreement (exact set equality)
    CHECK(rec == brute_recurrent(g.adj));
    CHECK(chain_components(g).size() == 2);
}

TEST_CASE("torus height gradient: four recurrent clusters") {
    FlowSystem sys = catalog_flow("torus_height_gradient");
    BoxCover cover = make_box_cover(sys.manifold, 24);
    TransitionGraph g = build_transition_graph(sys, cover, 1.0, cover.diameter, 5);
    auto rec = chain_recurrent_boxes(g);
    CHECK(rec == brute_recurrent(g.adj));
    auto parts = chain_components(g);
    CHECK(parts.size() == 4);
    // every cluster sits near one of the four zeros
    std::vector<ChartPoint> zeros = {{0, 0.0, 0.0}, {0, 0.0, 0.5}, {0, 0.5, 0.0}, {0, 0.5, 0.5}};
    for (const auto& part : parts) {
        for (int b : part) {
            double best = 1e9;
            for (const auto& z : zeros)
                best = std::min(best, sys.manifold.distance(cover.box_center(cover.boxes[b]), z));
            CHECK(best < 3.0 * cover.diameter);
        }
    }
}

TEST_CASE("oracle equivalence on random graphs up to 400 nodes") {
    std::mt19937_64 rng(777);
    for (int trial = 0; trial < 6; ++trial) {
        int n = 40 + (int)(rng() % 361);
        std::uniform_int_distribution<int> node(0, n - 1);
        std::vector<std::vector<int>> adj(n);
        int edges = n * 3;
        for (int e = 0; e < edges; ++e) adj[node(rng)].push_back(node(rng));
        for (auto& lst : adj) {
            std::sort(lst.begin(), lst.end());
            lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
        }
        std::vector<int> positions(n);
        for (int i = 0; i < n; ++i) positions[i] = i;
        TransitionGraph g = abstract_graph(adj, positions);
        CHECK(chain_recurrent_boxes(g) == brute_recurrent(adj));
    }
}

TEST_CASE("monotone refinement: halving boxes never grows the recurrent set past one layer") {
    for (const char* name : {"torus_height_gradient", "sphere_north_south"}) {
        FlowSystem sys = catalog_flow(name);
        BoxCover coarse = make_box_cover(sys.manifold, 16);
        BoxCover fine = make_box_cover(sys.manifold, 32);
        TransitionGraph gc = build_transition_graph(sys, coarse, 1.0, coarse.diameter, 5);
        TransitionGraph gf = build_transition_graph(sys, fine, 1.0, fine.diameter, 5);
        auto recc = chain_recurrent_boxes(gc);
        auto recf = chain_recurrent_boxes(gf);
        std::set<std::tuple<int, int, int>> coarse_set;
        for (int b : recc) {
            const Box& bb = coarse.boxes[b];
            coarse_set.insert({bb.chart, bb.i, bb.j});
        }
        auto coarse_or_neighbor = [&](int chart, int i, int j) {
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    int ii = i + di, jj = j + dj;
                    if (sys.manifold.periodic()) {
                        ii = ((ii % 16) + 16) % 16;
                        jj = ((jj % 16) + 16) % 16;
                    }
                    if (coarse_set.count({chart, ii, jj})) return true;
                }
            return false;
        };
        for (int b : recf) {
            const Box& bb = fine.boxes[b];
            CHECK(coarse_or_neighbor(bb.chart, bb.i / 2, bb.j / 2));
        }
    }
}

TEST_CASE("chain report lists counts and representatives") {
    FlowSystem sys = catalog_flow("torus_height_gradient");
    BoxCover cover = make_box_cover(sys.manifold, 16);
    TransitionGraph g = build_transition_graph(sys, cover, 1.0, cover.diameter, 5);
    ChainAnalysis a = analyze_graph(g);
    std::string rep = chain_report(g, a);
    CHECK(rep.find("chain_components = 4") != std::string::npos);
    CHECK(rep.find("recurrent_boxes =") != std::string::npos);
    CHECK(rep.find("representative=") != std::string::npos);
}
