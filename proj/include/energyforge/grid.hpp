#ifndef ENERGYFORGE_GRID_HPP
#define ENERGYFORGE_GRID_HPP

// Per-chart sampling grids. Torus/circle grids are periodic with N nodes per
// axis over [0,1); sphere charts carry (N+1)^2 nodes over [-2,2]^2 with the
// active disk |x| <= 2; plane-disk analogously over [-R,R].

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "energyforge/manifold.hpp"

namespace energyforge {

struct GridChart {
    int chart = 0;
    int nx = 0, ny = 0;  // node counts (ny == 1 for 1-D manifolds)
    double x0 = 0, y0 = 0;
    double h = 0;
    bool periodic = false;

    int64_t node_count() const { return int64_t(nx) * ny; }
    int64_t index(int i, int j) const { return int64_t(j) * nx + i; }
    Vec2 position(int i, int j) const { return {x0 + i * h, y0 + j * h}; }
    int wrap_i(int i) const { return periodic ? ((i % nx) + nx) % nx : i; }
    int wrap_j(int j) const { return periodic ? ((j % ny) + ny) % ny : j; }
    bool node_valid(int i, int j) const { return i >= 0 && i < nx && j >= 0 && j < ny; }
};

struct GridSpec {
    ManifoldKind kind = ManifoldKind::Torus;
    int dimension = 2;
    int resolution = 256;
    double disk_radius = 1.0;
    std::vector<GridChart> charts;

    static GridSpec make(const ManifoldSpec& m, int N) {
        GridSpec g;
        g.kind = m.kind;
        g.dimension = m.dimension;
        g.resolution = N;
        g.disk_radius = m.radius;
        switch (m.kind) {
            case ManifoldKind::Circle: {
                GridChart c{0, N, 1, 0.0, 0.0, 1.0 / N, true};
                g.charts.push_back(c);
                break;
            }
            case ManifoldKind::Torus: {
                GridChart c{0, N, N, 0.0, 0.0, 1.0 / N, true};
                g.charts.push_back(c);
                break;
            }
            case ManifoldKind::Sphere: {
                for (int chart = 0; chart < 2; ++chart) {
                    GridChart c{chart, N + 1, N + 1, -kSphereChartMax, -kSphereChartMax,
                                2 * kSphereChartMax / N, false};
                    g.charts.push_back(c);
                }
                break;
            }
            case ManifoldKind::PlaneDisk: {
                if (m.dimension == 1) {
                    GridChart c{0, N + 1, 1, -m.radius, 0.0, 2 * m.radius / N, false};
                    g.charts.push_back(c);
                } else {
                    GridChart c{0, N + 1, N + 1, -m.radius, -m.radius, 2 * m.radius / N, false};
                    g.charts.push_back(c);
                }
                break;
            }
        }
        return g;
    }

    // Nodes outside the active region are never assigned.
    bool node_active(int chart, int i, int j) const {
        const GridChart& c = charts[chart];
        Vec2 p = c.position(i, j);
        switch (kind) {
            case ManifoldKind::Circle:
            case ManifoldKind::Torus:
                return true;
            case ManifoldKind::Sphere:
                return p.norm() <= kSphereChartMax + 1e-12;
            case ManifoldKind::PlaneDisk:
                if (dimension == 1) return std::abs(p.x) <= disk_radius + 1e-12;
                return p.norm() <= disk_radius + 1e-12;
        }
        return false;
    }

    // True where this chart owns the point (interpolation/ownership rule).
    bool node_owned(int chart, int i, int j) const {
        if (kind != ManifoldKind::Sphere) return node_active(chart, i, j);
        return charts[chart].position(i, j).norm() <= 1.0 + 1e-12;
    }

    ChartPoint node_point(int chart, int i, int j) const {
        Vec2 p = charts[chart].position(i, j);
        return ChartPoint(chart, p.x, p.y);
    }

    double spacing() const { return charts[0].h; }
};

// One double value per grid node, per chart. NaN = undefined.
struct ScalarGrid {
    std::vector<std::vector<double>> values;

    static double nan() { return std::numeric_limits<double>::quiet_NaN(); }

    explicit ScalarGrid(const GridSpec& g) {
        values.resize(g.charts.size());
        for (size_t c = 0; c < g.charts.size(); ++c)
            values[c].assign(g.charts[c].node_count(), nan());
    }
    ScalarGrid() = default;

    double& at(const GridSpec& g, int chart, int i, int j) {
        return values[chart][g.charts[chart].index(i, j)];
    }
    double get(const GridSpec& g, int chart, int i, int j) const {
        return values[chart][g.charts[chart].index(i, j)];
    }
};

}  // namespace energyforge

#endif
