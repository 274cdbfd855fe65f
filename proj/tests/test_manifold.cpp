#include <catch2/catch_amalgamated.hpp>

#include "energyforge/flowspec.hpp"
#include "energyforge/manifold.hpp"

using namespace energyforge;

TEST_CASE("sphere chart transitions are mutually inverse on the overlap") {
    ManifoldSpec m;
    m.kind = ManifoldKind::Sphere;
    CHECK(chart_roundtrip_defect(m) < 1e-10);
}

TEST_CASE("sphere transition matches stereographic geometry") {
    ManifoldSpec m;
    m.kind = ManifoldKind::Sphere;
    ChartPoint p(0, 1.0, 0.0);  // equator point
    ChartPoint q = m.to_chart(p, 1);
    CHECK(q.x[0] == Catch::Approx(1.0));
    CHECK(q.x[1] == Catch::Approx(0.0).margin(1e-15));
    auto e0 = m.embed(p);
    auto e1 = m.embed(q);
    for (int i = 0; i < 3; ++i) CHECK(e0[i] == Catch::Approx(e1[i]).margin(1e-14));
    // poles are antipodal: chordal distance 2
    CHECK(m.distance(ChartPoint(0, 0, 0), ChartPoint(1, 0, 0)) == Catch::Approx(2.0));
}

TEST_CASE("torus and circle metrics wrap") {
    ManifoldSpec t;
    t.kind = ManifoldKind::Torus;
    CHECK(t.distance(ChartPoint(0, 0.1, 0.1), ChartPoint(0, 0.9, 0.9)) ==
          Catch::Approx(std::sqrt(0.08)));
    ManifoldSpec c;
    c.kind = ManifoldKind::Circle;
    c.dimension = 1;
    CHECK(c.distance(ChartPoint(0, 0.05), ChartPoint(0, 0.95)) == Catch::Approx(0.1));
}

TEST_CASE("plane-disk trapping invariant is checked on 360 boundary points") {
    // a linear sink points strictly inward: passes
    FlowSystem sink = flow_from_spec_text(
        "manifold.kind = plane-disk\n"
        "manifold.radius = 1\n"
        "field.expressions.0 = -x, -y\n");
    CHECK_NOTHROW(validate_system(sink));

    // the model saddle leaks outward: rejected unless marked test-only
    CHECK_THROWS_AS(flow_from_spec_text("manifold.kind = plane-disk\n"
                                        "manifold.radius = 4\n"
                                        "field.expressions.0 = x, -y\n"),
                    ValidationError);
    CHECK_NOTHROW(catalog_flow("planar_saddle"));
    CHECK_NOTHROW(catalog_flow("planar_center"));
}

TEST_CASE("sphere catalog field is transition consistent on the overlap") {
    FlowSystem sys = catalog_flow("sphere_north_south");
    // pushforward of the chart-0 field through the transition must equal the
    // chart-1 expressions on the overlap annulus
    for (int i = 0; i < 12; ++i) {
        double ang = 2 * kPi * i / 12.0;
        ChartPoint p(0, 1.3 * std::cos(ang), 1.3 * std::sin(ang));
        Vec2 v0 = sys.velocity(p);
        Mat2 J = sys.manifold.transition_jacobian(p);
        Vec2 pushed = J.apply(v0);
        Vec2 v1 = sys.velocity(sys.manifold.to_chart(p, 1));
        CHECK((pushed - v1).norm() < 1e-12);
    }
}

TEST_CASE("flow spec parse failures carry messages") {
    CHECK_THROWS_AS(flow_from_spec_text("field.expressions.0 = x\n"), SpecError);
    CHECK_THROWS_AS(flow_from_spec_text("manifold.kind = torus\n"
                                        "field.expressions.0 = x\n"),
                    SpecError);  // needs two components
    CHECK_THROWS_AS(flow_from_spec_text("manifold.kind = torus\nbroken line\n"), SpecError);
    CHECK_THROWS_AS(catalog_flow("no_such_flow"), SpecError);
}

TEST_CASE("catalog flows load and validate") {
    for (const auto& [name, text] : flow_catalog()) {
        FlowSystem sys = catalog_flow(name);
        CHECK(sys.field.catalog_name == name);
    }
}
