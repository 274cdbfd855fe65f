#include <catch2/catch_amalgamated.hpp>

#include "energyforge/expression.hpp"
#include "energyforge/flow_system.hpp"

using namespace energyforge;

static double eval2(const std::string& src, double x, double y) {
    auto e = parse_expression(src, {"x", "y"});
    double c[2] = {x, y};
    return e->eval(c);
}

TEST_CASE("component expressions evaluate like the math they spell") {
    auto comps = split_components("x*0.6931, -y*0.6931");
    REQUIRE(comps.size() == 2);
    auto field = parse_field({"x*0.6931", "-y*0.6931"}, {"x", "y"});
    double c[2] = {1.0, 1.0};
    CHECK(field[0]->eval(c) == Catch::Approx(0.6931));
    CHECK(field[1]->eval(c) == Catch::Approx(-0.6931));
}

TEST_CASE("sin(2*pi*x) at x=0.25 is 1") {
    CHECK(eval2("sin(2*pi*x)", 0.25, 0.0) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("operator precedence and functions") {
    CHECK(eval2("1+2*3", 0, 0) == Catch::Approx(7.0));
    CHECK(eval2("(1+2)*3", 0, 0) == Catch::Approx(9.0));
    CHECK(eval2("2^3^2", 0, 0) == Catch::Approx(512.0));  // right associative
    CHECK(eval2("-x^2", 2, 0) == Catch::Approx(-4.0));
    CHECK(eval2("exp(0)+cos(0)", 0, 0) == Catch::Approx(2.0));
    CHECK(eval2("x/y", 1, 4) == Catch::Approx(0.25));
    CHECK(eval2("1e-3*x", 2, 0) == Catch::Approx(0.002));
}

TEST_CASE("parameters resolve by name") {
    auto e = parse_expression("a*x + b", {"x"}, {{"a", 2.0}, {"b", 0.5}});
    double c[1] = {3.0};
    CHECK(e->eval(c) == Catch::Approx(6.5));
}

TEST_CASE("unbalanced parenthesis reports its column") {
    try {
        parse_expression("x*(", {"x", "y"});
        FAIL("expected ParseError");
    } catch (const ParseError& err) {
        CHECK(err.column == 3);
        CHECK(std::string(err.what()).find("column 3") != std::string::npos);
    }
}

TEST_CASE("unknown identifier reports position") {
    try {
        parse_expression("x + blob", {"x", "y"});
        FAIL("expected ParseError");
    } catch (const ParseError& err) {
        CHECK(err.column == 5);
    }
}

TEST_CASE("trailing garbage and empty operand are syntax errors") {
    CHECK_THROWS_AS(parse_expression("x )", {"x"}), ParseError);
    CHECK_THROWS_AS(parse_expression("x +", {"x"}), ParseError);
    CHECK_THROWS_AS(parse_expression("sin x", {"x"}), ParseError);
}

TEST_CASE("top-level comma split keeps nested commas intact") {
    auto c = split_components("sin(2*pi*x), y*(1+cos(x))");
    REQUIRE(c.size() == 2);
    CHECK(c[1].find("cos") != std::string::npos);
}
