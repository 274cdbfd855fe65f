#ifndef ENERGYFORGE_ENERGY_HPP
#define ENERGYFORGE_ENERGY_HPP

// The grid-sampled energy function: region-tagged values per chart node,
// bilinear evaluation, delimited-text persistence, and level-set export.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "energyforge/grid.hpp"
#include "energyforge/polyline.hpp"

namespace energyforge {

enum class RegionTag : uint8_t {
    Undefined = 0,
    Chart,  // local chart of a sink or the cap of a source
    V1,
    V2,
    V3,
    V4,
    Vk,
};

inline const char* tag_name(RegionTag t) {
    switch (t) {
        case RegionTag::Undefined: return "undefined";
        case RegionTag::Chart: return "chart";
        case RegionTag::V1: return "V1";
        case RegionTag::V2: return "V2";
        case RegionTag::V3: return "V3";
        case RegionTag::V4: return "V4";
        case RegionTag::Vk: return "Vk";
    }
    return "?";
}

struct EnergyField {
    GridSpec grid;
    ScalarGrid phi;
    std::vector<std::vector<uint8_t>> tag;    // RegionTag per node
    std::vector<std::vector<int16_t>> stage;  // owning stage (1-based, 0 = none)
    int k = 0;
    uint64_t spec_hash = 0;
    double time_scale = 1.0;
    std::vector<ChartPoint> points;  // fixed points in stage order
    std::vector<int> point_lambda;

    void init(const GridSpec& g) {
        grid = g;
        phi = ScalarGrid(g);
        tag.resize(g.charts.size());
        stage.resize(g.charts.size());
        for (size_t c = 0; c < g.charts.size(); ++c) {
            tag[c].assign(g.charts[c].node_count(), 0);
            stage[c].assign(g.charts[c].node_count(), 0);
        }
    }

    bool defined(int chart, int i, int j) const {
        return !std::isnan(phi.get(grid, chart, i, j));
    }

    std::string tag_string(int chart, int64_t idx) const {
        RegionTag t = (RegionTag)tag[chart][idx];
        if (t == RegionTag::Undefined) return "undefined";
        if (t == RegionTag::Vk) return "Vk";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s_s%d", tag_name(t), (int)stage[chart][idx]);
        return buf;
    }
};

// Bilinear (linear in 1-D) interpolation, chart-aware: sphere points evaluate
// in the chart where they are innermost.
inline double eval_energy(const EnergyField& field, const ManifoldSpec& m, const ChartPoint& p0) {
    ChartPoint p = p0;
    if (m.kind == ManifoldKind::Sphere) {
        int pref = p.vec().norm() <= 1.0 ? p.chart : 1 - p.chart;
        if (pref != p.chart && p.vec().norm() > 1e-12) p = m.to_chart(p, pref);
    }
    m.normalize(p);
    const GridChart& c = field.grid.charts[p.chart];
    const auto& vals = field.phi.values[p.chart];
    double fx = (p.x[0] - c.x0) / c.h;
    int i0 = (int)std::floor(fx);
    double tx = fx - i0;
    if (m.dimension == 1) {
        int ia = c.wrap_i(i0), ib = c.wrap_i(i0 + 1);
        if (!c.periodic) {
            ia = std::clamp(ia, 0, c.nx - 1);
            ib = std::clamp(ib, 0, c.nx - 1);
        }
        return vals[ia] * (1 - tx) + vals[ib] * tx;
    }
    double fy = (p.x[1] - c.y0) / c.h;
    int j0 = (int)std::floor(fy);
    double ty = fy - j0;
    int ia = i0, ja = j0;
    if (!c.periodic) {
        ia = std::clamp(ia, 0, c.nx - 2);
        ja = std::clamp(ja, 0, c.ny - 2);
        tx = std::clamp(fx - ia, 0.0, 1.0);
        ty = std::clamp(fy - ja, 0.0, 1.0);
    }
    double v00 = vals[c.index(c.wrap_i(ia), c.wrap_j(ja))];
    double v10 = vals[c.index(c.wrap_i(ia + 1), c.wrap_j(ja))];
    double v01 = vals[c.index(c.wrap_i(ia), c.wrap_j(ja + 1))];
    double v11 = vals[c.index(c.wrap_i(ia + 1), c.wrap_j(ja + 1))];
    return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

// ---------------------------------------------------------------------------
// persistence: delimited text grid
// ---------------------------------------------------------------------------

inline void save_energy_grid(const std::string& path, const EnergyField& f,
                             const ManifoldSpec& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write energy grid: " + path);
    char buf[256];
    out << "# energyforge energy grid\n";
    out << "# manifold = " << kind_name(m.kind) << "\n";
    out << "# dimension = " << m.dimension << "\n";
    out << "# radius = " << m.radius << "\n";
    out << "# resolution = " << f.grid.resolution << "\n";
    out << "# charts = " << f.grid.charts.size() << "\n";
    out << "# k = " << f.k << "\n";
    std::snprintf(buf, sizeof buf, "# spec_hash = %llu\n# time_scale = %.17g\n",
                  (unsigned long long)f.spec_hash, f.time_scale);
    out << buf;
    for (size_t s = 0; s < f.points.size(); ++s) {
        std::snprintf(buf, sizeof buf, "# point %zu = %d %.17g %.17g %d\n", s + 1,
                      f.points[s].chart, f.points[s].x[0], f.points[s].x[1], f.point_lambda[s]);
        out << buf;
    }
    out << "chart\tix\tiy\tx\ty\tphi\tregion_tag\n";
    for (size_t chart = 0; chart < f.grid.charts.size(); ++chart) {
        const GridChart& c = f.grid.charts[chart];
        for (int j = 0; j < c.ny; ++j) {
            for (int i = 0; i < c.nx; ++i) {
                if (!f.grid.node_active((int)chart, i, j)) continue;
                Vec2 p = c.position(i, j);
                double v = f.phi.get(f.grid, (int)chart, i, j);
                std::snprintf(buf, sizeof buf, "%zu\t%d\t%d\t%.10g\t%.10g\t%.17g\t%s\n", chart, i,
                              j, p.x, p.y, v, f.tag_string((int)chart, c.index(i, j)).c_str());
                out << buf;
            }
        }
    }
}

inline EnergyField load_energy_grid(const std::string& path, ManifoldSpec* m_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open energy grid: " + path);
    ManifoldSpec m;
    int resolution = 0;
    EnergyField f;
    std::string line;
    std::vector<std::array<double, 4>> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line.substr(1));
            std::string key, eq;
            ls >> key;
            if (key == "manifold") {
                ls >> eq;
                std::string v;
                ls >> v;
                m.kind = kind_from_name(v);
            } else if (key == "dimension") {
                ls >> eq >> m.dimension;
            } else if (key == "radius") {
                ls >> eq >> m.radius;
            } else if (key == "resolution") {
                ls >> eq >> resolution;
            } else if (key == "k") {
                ls >> eq >> f.k;
            } else if (key == "spec_hash") {
                unsigned long long h;
                ls >> eq >> h;
                f.spec_hash = h;
            } else if (key == "time_scale") {
                ls >> eq >> f.time_scale;
            } else if (key == "point") {
                int idx;
                ls >> idx >> eq;
                std::array<double, 4> p{};
                ls >> p[0] >> p[1] >> p[2] >> p[3];
                points.push_back(p);
            }
            continue;
        }
        if (line.rfind("chart\t", 0) == 0) break;  // header row reached
    }
    if (resolution <= 0) throw std::runtime_error("energy grid: missing resolution header");
    f.init(GridSpec::make(m, resolution));
    for (const auto& p : points) {
        f.points.push_back(ChartPoint((int)p[0], p[1], p[2]));
        f.point_lambda.push_back((int)p[3]);
    }
    int chart, ix, iy;
    double x, y, phi;
    std::string tagstr;
    while (in >> chart >> ix >> iy >> x >> y >> phi >> tagstr) {
        f.phi.at(f.grid, chart, ix, iy) = phi;
        int64_t idx = f.grid.charts[chart].index(ix, iy);
        RegionTag t = RegionTag::Undefined;
        int stage = 0;
        if (tagstr == "Vk") {
            t = RegionTag::Vk;
            stage = f.k;
        } else if (tagstr != "undefined") {
            auto us = tagstr.find("_s");
            std::string base = tagstr.substr(0, us);
            if (us != std::string::npos) stage = std::atoi(tagstr.c_str() + us + 2);
            if (base == "chart") t = RegionTag::Chart;
            else if (base == "V1") t = RegionTag::V1;
            else if (base == "V2") t = RegionTag::V2;
            else if (base == "V3") t = RegionTag::V3;
            else if (base == "V4") t = RegionTag::V4;
        }
        f.tag[chart][idx] = (uint8_t)t;
        f.stage[chart][idx] = (int16_t)stage;
    }
    if (m_out) *m_out = m;
    return f;
}

// Level sets of the stored field as structured text.
inline std::string level_set_text(const EnergyField& f, const std::vector<double>& levels) {
    std::ostringstream out;
    out << "# level sets\n";
    char buf[128];
    for (double lv : levels) {
        for (size_t chart = 0; chart < f.grid.charts.size(); ++chart) {
            auto polys = marching_squares(f.grid, f.phi, (int)chart, lv);
            for (const auto& poly : polys) {
                std::snprintf(buf, sizeof buf, "level %.10g chart %zu closed %d points %zu\n", lv,
                              chart, poly.closed ? 1 : 0, poly.pts.size());
                out << buf;
                for (const Vec2& p : poly.pts) {
                    std::snprintf(buf, sizeof buf, "  %.8f %.8f\n", p.x, p.y);
                    out << buf;
                }
            }
        }
    }
    return out.str();
}

// Max |phi_a - phi_b| over adjacent same-chart node pairs with different
// region tags (the interface-continuity diagnostic). `exclude` marks points
// (chart coordinates per chart) whose `radius`-neighborhoods are skipped: the
// constructed function is continuous but non-Lipschitz along the stable
// corridors of earlier saddles (its level sets pinch below any cell width
// there), so adjacent-node jumps at those corridors do not measure the
// discretization seam error.
struct ExclusionSet {
    std::vector<std::vector<Vec2>> per_chart;
    double radius = 0;

    bool near(const GridSpec& g, int chart, const Vec2& p) const {
        if (per_chart.empty()) return false;
        bool periodic = g.charts[chart].periodic;
        for (const Vec2& q : per_chart[chart]) {
            Vec2 d = q - p;
            if (periodic) {
                d.x -= std::round(d.x);
                d.y -= std::round(d.y);
            }
            if (d.norm() <= radius) return true;
        }
        return false;
    }
};

inline double max_interface_jump(const EnergyField& f, const ExclusionSet* exclude = nullptr) {
    double worst = 0;
    for (size_t chart = 0; chart < f.grid.charts.size(); ++chart) {
        const GridChart& c = f.grid.charts[chart];
        auto key = [&](int i, int j) {
            int64_t idx = c.index(i, j);
            return std::pair<uint8_t, int16_t>(f.tag[chart][idx], f.stage[chart][idx]);
        };
        int imax = c.periodic ? c.nx : c.nx - 1;
        int jmax = c.ny == 1 ? 1 : (c.periodic ? c.ny : c.ny - 1);
        for (int j = 0; j < c.ny; ++j) {
            for (int i = 0; i < c.nx; ++i) {
                double v = f.phi.get(f.grid, (int)chart, i, j);
                if (std::isnan(v)) continue;
                if (exclude && exclude->near(f.grid, (int)chart, c.position(i, j))) continue;
                auto consider = [&](int i2, int j2) {
                    double w = f.phi.get(f.grid, (int)chart, i2, j2);
                    if (std::isnan(w)) return;
                    if (key(i, j) == key(i2, j2)) return;
                    if (exclude && exclude->near(f.grid, (int)chart, c.position(i2, j2))) return;
                    worst = std::max(worst, std::abs(v - w));
                };
                if (i < imax) consider(c.wrap_i(i + 1), j);
                if (c.ny > 1 && j < jmax) consider(i, c.wrap_j(j + 1));
            }
        }
    }
    return worst;
}

}  // namespace energyforge

#endif
