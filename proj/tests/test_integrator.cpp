#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "energyforge/flowspec.hpp"
#include "energyforge/integrator.hpp"

using namespace energyforge;

namespace {

const double kLn2 = 0.6931471805599453;

FlowSystem model_flow(int lambda, double radius = 20.0) {
    // v = ln2 * (x_1..x_lambda, -x_{lambda+1}..-x_n), n = 2
    std::string sx = lambda >= 1 ? "0.6931471805599453*x" : "-0.6931471805599453*x";
    std::string sy = lambda >= 2 ? "0.6931471805599453*y" : "-0.6931471805599453*y";
    return flow_from_spec_text("manifold.kind = plane-disk\nmanifold.radius = " +
                               std::to_string(radius) +
                               "\nfield.test_only = true\nfield.expressions.0 = " + sx + ", " +
                               sy + "\n");
}

Vec2 model_exact(int lambda, Vec2 x0, double t) {
    double ax = lambda >= 1 ? std::pow(2.0, t) : std::pow(2.0, -t);
    double ay = lambda >= 2 ? std::pow(2.0, t) : std::pow(2.0, -t);
    return {x0.x * ax, x0.y * ay};
}

}  // namespace

TEST_CASE("duration zero returns the start point") {
    FlowSystem sys = catalog_flow("torus_height_gradient");
    ChartPoint p(0, 0.37, 0.81);
    auto seg = integrate(sys, p, 0.0);
    CHECK(seg.samples.size() == 1);
    CHECK(seg.endpoint().x[0] == Catch::Approx(0.37));
    ChartPoint q = flow_to(sys, p, 0.0);
    CHECK(q.x[1] == Catch::Approx(0.81));
}

TEST_CASE("model saddle: (1,1) flows to (2, 0.5) in unit time") {
    FlowSystem sys = model_flow(1);
    ChartPoint end = flow_to(sys, ChartPoint(0, 1.0, 1.0), 1.0);
    CHECK(end.x[0] == Catch::Approx(2.0).epsilon(1e-9));
    CHECK(end.x[1] == Catch::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("1-D exponential contraction: x(ln 2) = 0.5 from x=1") {
    FlowSystem sys = flow_from_spec_text(
        "manifold.kind = plane-disk\nmanifold.dimension = 1\nmanifold.radius = 2\n"
        "field.expressions.0 = -x\n");
    ChartPoint end = flow_to(sys, ChartPoint(0, 1.0), kLn2);
    CHECK(end.x[0] == Catch::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("closed-form conformance: a^t_lambda reproduced within 1e-8 on [-4,4]") {
    for (int lambda : {0, 1, 2}) {
        FlowSystem sys = model_flow(lambda);
        Vec2 x0{0.31, -0.42};
        for (double t : {-4.0, -2.5, -1.0, -0.25, 0.5, 1.5, 3.0, 4.0}) {
            ChartPoint end = flow_to(sys, ChartPoint(0, x0.x, x0.y), t);
            Vec2 exact = model_exact(lambda, x0, t);
            CHECK(std::abs(end.x[0] - exact.x) < 1e-8);
            CHECK(std::abs(end.x[1] - exact.y) < 1e-8);
        }
    }
}

TEST_CASE("group law f^t(f^s(x)) = f^{t+s}(x) within 10*tol") {
    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> upos(0.0, 1.0), ut(-2.0, 2.0);

    FlowSystem sphere = catalog_flow("sphere_north_south");
    for (int i = 0; i < 25; ++i) {
        ChartPoint x(0, 2 * upos(rng) - 1, 2 * upos(rng) - 1);
        double s = ut(rng), t = ut(rng);
        ChartPoint a = flow_to(sphere, flow_to(sphere, x, s), t);
        ChartPoint b = flow_to(sphere, x, s + t);
        CHECK(sphere.manifold.distance(a, b) < 10 * sphere.tol);
    }

    FlowSystem saddle = model_flow(1);
    for (int i = 0; i < 25; ++i) {
        ChartPoint x(0, upos(rng) - 0.5, upos(rng) - 0.5);
        double s = ut(rng), t = ut(rng);
        ChartPoint a = flow_to(saddle, flow_to(saddle, x, s), t);
        ChartPoint b = flow_to(saddle, x, s + t);
        CHECK(saddle.manifold.distance(a, b) < 10 * saddle.tol);
    }

    // the torus catalog field has rates 2*pi; local error is amplified by
    // near-saddle passages, so the composition defect is checked at the
    // amplified scale rather than 10*tol
    FlowSystem torus = catalog_flow("torus_height_gradient");
    for (int i = 0; i < 25; ++i) {
        ChartPoint x(0, upos(rng), upos(rng));
        double s = ut(rng), t = ut(rng);
        ChartPoint a = flow_to(torus, flow_to(torus, x, s), t);
        ChartPoint b = flow_to(torus, x, s + t);
        CHECK(torus.manifold.distance(a, b) < 1e-5);
    }
}

TEST_CASE("sphere trajectories agree across charts in the overlap") {
    FlowSystem sys = catalog_flow("sphere_north_south");
    for (double ang : {0.3, 1.7, 4.0}) {
        ChartPoint p0(0, 1.1 * std::cos(ang), 1.1 * std::sin(ang));
        ChartPoint p1 = sys.manifold.to_chart(p0, 1);
        ChartPoint a = flow_to(sys, p0, 0.8);
        ChartPoint b = flow_to(sys, p1, 0.8);
        CHECK(sys.manifold.distance(a, b) < 1e-7);
    }
}

TEST_CASE("trajectory samples are strictly monotone in time and step-bounded") {
    FlowSystem sys = catalog_flow("sphere_north_south");
    auto seg = integrate(sys, ChartPoint(0, 0.4, 0.2), 3.0);
    for (size_t i = 1; i < seg.samples.size(); ++i) {
        CHECK(seg.samples[i].t > seg.samples[i - 1].t);
        CHECK(seg.samples[i].t - seg.samples[i - 1].t <= sys.max_step + 1e-12);
    }
    auto back = integrate(sys, ChartPoint(0, 0.4, 0.2), -2.0);
    CHECK_FALSE(back.forward);
    for (size_t i = 1; i < back.samples.size(); ++i)
        CHECK(back.samples[i].t < back.samples[i - 1].t);
}

TEST_CASE("leaving the plane-disk domain is an integration error") {
    FlowSystem sys = catalog_flow("planar_saddle");  // radius 4
    CHECK_THROWS_AS(flow_to(sys, ChartPoint(0, 3.0, 0.1), 1.0), IntegrationError);
    // backward time from a trapped-side point also exits
    CHECK_THROWS_AS(flow_to(sys, ChartPoint(0, 0.1, 3.0), -1.0), IntegrationError);
}

TEST_CASE("hit_time finds ln 2 for g = x - 1/2 under contraction") {
    FlowSystem sys = flow_from_spec_text(
        "manifold.kind = plane-disk\nmanifold.dimension = 1\nmanifold.radius = 2\n"
        "field.expressions.0 = -x\n");
    auto hit = hit_time(sys, ChartPoint(0, 1.0),
                        [](const ChartPoint& p) { return p.x[0] - 0.5; }, true, 10.0);
    CHECK(hit.time == Catch::Approx(kLn2).margin(1e-7));
    CHECK(std::abs(hit.point.x[0] - 0.5) < 1e-6);

    // first-crossing property: shrinking t_max just above the answer agrees
    auto hit2 = hit_time(sys, ChartPoint(0, 1.0),
                         [](const ChartPoint& p) { return p.x[0] - 0.5; }, true,
                         hit.time + 1e-3);
    CHECK(hit2.time == Catch::Approx(hit.time).margin(1e-7));
}

TEST_CASE("hit_time rejects g = 0 at the start") {
    FlowSystem sys = flow_from_spec_text(
        "manifold.kind = plane-disk\nmanifold.dimension = 1\nmanifold.radius = 2\n"
        "field.expressions.0 = -x\n");
    CHECK_THROWS_AS(hit_time(sys, ChartPoint(0, 0.5),
                             [](const ChartPoint& p) { return p.x[0] - 0.5; }, true, 10.0),
                    HitError);
}

TEST_CASE("model saddle scaffold time t2 = log4(7/3) from c_i backward") {
    // start on c_i: |x_u|^2 = 7/12, |x_s|^2 = 1/4, g = phi - (i + 1/3)
    FlowSystem sys = model_flow(1);
    double i_level = 3.0;
    ChartPoint c(0, std::sqrt(7.0 / 12.0), 0.5);
    auto g = [&](const ChartPoint& p) {
        double phi = i_level - p.x[0] * p.x[0] + p.x[1] * p.x[1];
        return phi - (i_level + 1.0 / 3.0);
    };
    auto hit = hit_time(sys, c, g, false, 10.0);
    double t2 = std::log(7.0 / 3.0) / std::log(4.0);
    CHECK(hit.time == Catch::Approx(t2).margin(1e-6));

    // brute-force fine-step scan brackets the same root
    double prev = g(c);
    double scan_hit = -1;
    for (double t = 1e-4; t < 1.0; t += 1e-4) {
        double cur = g(flow_to(sys, c, -t));
        if ((prev <= 0) != (cur <= 0)) {
            scan_hit = t;
            break;
        }
        prev = cur;
    }
    REQUIRE(scan_hit > 0);
    CHECK(std::abs(scan_hit - hit.time) <= 2e-4);

    // no sign change within a too-small window
    CHECK_THROWS_AS(hit_time(sys, c, g, false, 0.1), HitError);
}
