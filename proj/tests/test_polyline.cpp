#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "energyforge/polyline.hpp"

using namespace energyforge;

namespace {

GridSpec plane_grid(int N, double R = 1.0) {
    ManifoldSpec m;
    m.kind = ManifoldKind::PlaneDisk;
    m.radius = R;
    return GridSpec::make(m, N);
}

GridSpec torus_grid(int N) {
    ManifoldSpec m;
    m.kind = ManifoldKind::Torus;
    return GridSpec::make(m, N);
}

}  // namespace

TEST_CASE("marching squares extracts a circle as one closed polyline") {
    GridSpec g = plane_grid(128);
    ScalarGrid grid(g);
    const GridChart& c = g.charts[0];
    for (int j = 0; j < c.ny; ++j)
        for (int i = 0; i < c.nx; ++i) {
            Vec2 p = c.position(i, j);
            grid.at(g, 0, i, j) = p.norm2();
        }
    double r = 0.6;
    auto polys = marching_squares(g, grid, 0, r * r);
    REQUIRE(polys.size() == 1);
    CHECK(polys[0].closed);
    CHECK(polys[0].length() == Catch::Approx(2 * kPi * r).epsilon(0.01));
    for (const Vec2& p : polys[0].pts) CHECK(std::abs(p.norm() - r) < c.h);
}

TEST_CASE("cells with undefined corners are skipped, leaving open chains") {
    GridSpec g = plane_grid(64);
    ScalarGrid grid(g);
    const GridChart& c = g.charts[0];
    for (int j = 0; j < c.ny; ++j)
        for (int i = 0; i < c.nx; ++i) {
            Vec2 p = c.position(i, j);
            grid.at(g, 0, i, j) = p.y > 0 ? ScalarGrid::nan() : p.norm2();
        }
    auto polys = marching_squares(g, grid, 0, 0.36);
    REQUIRE(!polys.empty());
    for (const auto& poly : polys) CHECK_FALSE(poly.closed);
}

TEST_CASE("torus contour crossing the periodic seam stays one closed curve") {
    GridSpec g = torus_grid(96);
    ScalarGrid grid(g);
    const GridChart& c = g.charts[0];
    ManifoldSpec m;
    m.kind = ManifoldKind::Torus;
    ChartPoint center(0, 0.02, 0.5);  // circle straddles x = 0
    for (int j = 0; j < c.ny; ++j)
        for (int i = 0; i < c.nx; ++i) {
            ChartPoint p(0, c.position(i, j).x, c.position(i, j).y);
            double d = m.distance(p, center);
            grid.at(g, 0, i, j) = d * d;
        }
    auto polys = marching_squares(g, grid, 0, 0.04);  // radius 0.2 circle
    REQUIRE(polys.size() == 1);
    CHECK(polys[0].closed);
    CHECK(polys[0].length() == Catch::Approx(2 * kPi * 0.2).epsilon(0.02));
}

TEST_CASE("non-contractible torus level sets close over the lattice") {
    GridSpec g = torus_grid(64);
    ScalarGrid grid(g);
    const GridChart& c = g.charts[0];
    for (int j = 0; j < c.ny; ++j)
        for (int i = 0; i < c.nx; ++i)
            grid.at(g, 0, i, j) = std::cos(2 * kPi * c.position(i, j).y);
    auto polys = marching_squares(g, grid, 0, 0.0);  // y = 1/4 and y = 3/4 lines
    REQUIRE(polys.size() == 2);
    for (const auto& poly : polys) {
        CHECK(poly.closed);
        CHECK(poly.length() == Catch::Approx(1.0).epsilon(0.01));
    }
}

TEST_CASE("segment index finds the first chord crossing") {
    GridSpec g = plane_grid(128);
    ScalarGrid grid(g);
    const GridChart& c = g.charts[0];
    for (int j = 0; j < c.ny; ++j)
        for (int i = 0; i < c.nx; ++i) grid.at(g, 0, i, j) = c.position(i, j).norm2();
    auto polys = marching_squares(g, grid, 0, 0.25);  // circle r=0.5
    REQUIRE(polys.size() == 1);
    SegmentIndex idx(&polys, false, 0.05);

    // chord from origin outward crosses near (0.5, 0)
    auto hit = idx.first_crossing({0.0, 0.0}, {0.9, 0.0});
    REQUIRE(hit.has_value());
    CHECK(hit->point.x == Catch::Approx(0.5).margin(0.01));
    CHECK(hit->s_chord == Catch::Approx(0.5 / 0.9).margin(0.02));

    // brute force agreement
    double best = 2.0;
    for (size_t s = 0; s + 1 < polys[0].pts.size(); ++s) {
        auto h = segment_intersect({0, 0}, {0.9, 0.0}, polys[0].pts[s], polys[0].pts[s + 1]);
        if (h) best = std::min(best, h->s);
    }
    CHECK(hit->s_chord == Catch::Approx(best).margin(1e-12));

    // chord that stays inside: no crossing
    CHECK_FALSE(idx.first_crossing({0.0, 0.0}, {0.2, 0.2}).has_value());
}

TEST_CASE("segment index wraps on the torus") {
    std::vector<Polyline> polys(1);
    polys[0].chart = 0;
    polys[0].closed = false;
    polys[0].pts = {{0.98, 0.4}, {0.98, 0.6}};  // vertical segment near the seam
    polys[0].finalize();
    SegmentIndex idx(&polys, true, 1.0 / 16);
    // chord crossing the seam from x=0.95 to x=1.05 (= 0.05 wrapped)
    auto hit = idx.first_crossing({0.95, 0.5}, {1.05, 0.5});
    REQUIRE(hit.has_value());
    CHECK(hit->point.x == Catch::Approx(0.98));
    // same chord expressed from the wrapped side
    auto hit2 = idx.first_crossing({-0.05, 0.5}, {0.05, 0.5});
    REQUIRE(hit2.has_value());
    CHECK(hit2->arclen == Catch::Approx(hit->arclen).margin(1e-12));
}

TEST_CASE("arclength parameterization walks the curve") {
    Polyline p;
    p.pts = {{0, 0}, {1, 0}, {1, 1}};
    p.finalize();
    CHECK(p.length() == Catch::Approx(2.0));
    Vec2 mid = p.point_at(1.5);
    CHECK(mid.x == Catch::Approx(1.0));
    CHECK(mid.y == Catch::Approx(0.5));
}

TEST_CASE("1-D level points interpolate crossings") {
    ManifoldSpec m;
    m.kind = ManifoldKind::Circle;
    m.dimension = 1;
    GridSpec g = GridSpec::make(m, 64);
    ScalarGrid grid(g);
    for (int i = 0; i < 64; ++i) {
        double x = i / 64.0;
        grid.values[0][i] = std::cos(2 * kPi * x);
    }
    auto pts = level_points_1d(g, grid, 0.0);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].x == Catch::Approx(0.25).margin(1e-3));
    CHECK(pts[1].x == Catch::Approx(0.75).margin(1e-3));
    CHECK_FALSE(pts[0].upward);
    CHECK(pts[1].upward);
}
