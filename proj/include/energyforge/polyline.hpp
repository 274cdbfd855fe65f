#ifndef ENERGYFORGE_POLYLINE_HPP
#define ENERGYFORGE_POLYLINE_HPP

// Polylines on chart planes (wrap-aware on the torus), marching-squares
// isocontour extraction, and a binned segment index for first-crossing
// queries of trajectory chords.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "energyforge/geometry.hpp"
#include "energyforge/grid.hpp"

namespace energyforge {

// Vertices are stored contiguously (consecutive points differ by the true
// displacement, no wrap jumps); on the torus the curve may leave [0,1)^2 and a
// closed loop ends either at its start or displaced by a lattice vector
// (non-contractible loop).
struct Polyline {
    int chart = 0;
    bool closed = false;
    std::vector<Vec2> pts;
    std::vector<double> cum;  // cumulative arclength, cum[0] = 0

    void finalize() {
        cum.resize(pts.size());
        double s = 0;
        cum[0] = 0;
        for (size_t i = 1; i < pts.size(); ++i) {
            s += (pts[i] - pts[i - 1]).norm();
            cum[i] = s;
        }
    }
    double length() const { return cum.empty() ? 0.0 : cum.back(); }
    size_t segment_count() const { return pts.size() > 1 ? pts.size() - 1 : 0; }

    Vec2 point_at(double s) const {
        if (pts.size() == 1) return pts[0];
        double L = length();
        if (closed) {
            s = std::fmod(s, L);
            if (s < 0) s += L;
        } else {
            s = std::clamp(s, 0.0, L);
        }
        auto it = std::upper_bound(cum.begin(), cum.end(), s);
        size_t hi = std::min(pts.size() - 1, size_t(it - cum.begin()));
        size_t lo = hi - 1;
        double den = cum[hi] - cum[lo];
        double t = den > 0 ? (s - cum[lo]) / den : 0.0;
        return pts[lo] + (pts[hi] - pts[lo]) * t;
    }

    // Cyclic arc distance between two arclength positions (closed polylines).
    double arc_distance(double a, double b) const {
        double L = length();
        double d = std::fmod(std::abs(a - b), L);
        return closed ? std::min(d, L - d) : std::abs(a - b);
    }
};

inline double point_polyline_dist(const Vec2& p, const Polyline& poly) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t s = 0; s + 1 < poly.pts.size(); ++s)
        best = std::min(best, point_segment_dist2(p, poly.pts[s], poly.pts[s + 1]));
    return std::sqrt(best);
}

// ---------------------------------------------------------------------------
// marching squares
// ---------------------------------------------------------------------------

namespace detail {

struct MsSegment {
    int64_t ekey0, ekey1;  // canonical edge ids of the two endpoints
    Vec2 p0, p1;           // cell-local (contiguous within the cell)
};

}  // namespace detail

// Extracts the level set {value == level} of a sampled scalar field as
// polylines. Cells touching undefined (NaN) nodes are skipped. below = v < level.
inline std::vector<Polyline> marching_squares(const GridSpec& g, const ScalarGrid& grid,
                                              int chart, double level) {
    const GridChart& c = g.charts[chart];
    if (c.ny == 1) return {};  // 1-D handled elsewhere
    const auto& vals = grid.values[chart];
    int cell_nx = c.periodic ? c.nx : c.nx - 1;
    int cell_ny = c.periodic ? c.ny : c.ny - 1;

    auto node_val = [&](int i, int j) { return vals[c.index(c.wrap_i(i), c.wrap_j(j))]; };
    // edge ids: (j*nx + i)*2 + axis, axis 0 = horizontal edge from (i,j) to (i+1,j)
    auto ekey = [&](int i, int j, int axis) {
        return (int64_t(c.wrap_j(j)) * c.nx + c.wrap_i(i)) * 2 + axis;
    };

    std::vector<detail::MsSegment> segs;
    for (int j = 0; j < cell_ny; ++j) {
        for (int i = 0; i < cell_nx; ++i) {
            double v00 = node_val(i, j), v10 = node_val(i + 1, j);
            double v11 = node_val(i + 1, j + 1), v01 = node_val(i, j + 1);
            if (std::isnan(v00) || std::isnan(v10) || std::isnan(v11) || std::isnan(v01))
                continue;
            int mask = (v00 < level ? 1 : 0) | (v10 < level ? 2 : 0) | (v11 < level ? 4 : 0) |
                       (v01 < level ? 8 : 0);
            if (mask == 0 || mask == 15) continue;
            Vec2 base = c.position(i, j);
            double h = c.h;
            auto lerp = [&](double a, double b) {
                double d = b - a;
                return std::abs(d) > 0 ? std::clamp((level - a) / d, 0.0, 1.0) : 0.5;
            };
            // edge crossing points (cell-local, contiguous)
            Vec2 bottom{base.x + h * lerp(v00, v10), base.y};
            Vec2 right{base.x + h, base.y + h * lerp(v10, v11)};
            Vec2 top{base.x + h * lerp(v01, v11), base.y + h};
            Vec2 left{base.x, base.y + h * lerp(v00, v01)};
            int64_t keyB = ekey(i, j, 0), keyR = ekey(i + 1, j, 1);
            int64_t keyT = ekey(i, j + 1, 0), keyL = ekey(i, j, 1);
            auto emit = [&](int64_t ka, const Vec2& pa, int64_t kb, const Vec2& pb) {
                segs.push_back({ka, kb, pa, pb});
            };
            switch (mask) {
                case 1: case 14: emit(keyB, bottom, keyL, left); break;
                case 2: case 13: emit(keyB, bottom, keyR, right); break;
                case 3: case 12: emit(keyL, left, keyR, right); break;
                case 4: case 11: emit(keyR, right, keyT, top); break;
                case 6: case 9: emit(keyB, bottom, keyT, top); break;
                case 7: case 8: emit(keyL, left, keyT, top); break;
                case 5: case 10: {
                    double center = 0.25 * (v00 + v10 + v11 + v01);
                    bool center_below = center < level;
                    bool join_bl = (mask == 5) == center_below;
                    if (join_bl) {
                        emit(keyB, bottom, keyL, left);
                        emit(keyR, right, keyT, top);
                    } else {
                        emit(keyB, bottom, keyR, right);
                        emit(keyL, left, keyT, top);
                    }
                    break;
                }
            }
        }
    }

    // stitch segments into chains via shared edge keys
    std::unordered_map<int64_t, std::vector<int>> by_edge;
    for (int s = 0; s < (int)segs.size(); ++s) {
        by_edge[segs[s].ekey0].push_back(s);
        by_edge[segs[s].ekey1].push_back(s);
    }
    std::vector<char> used(segs.size(), 0);
    std::vector<Polyline> out;

    auto next_unused = [&](int64_t key) -> int {
        auto it = by_edge.find(key);
        if (it == by_edge.end()) return -1;
        for (int s : it->second)
            if (!used[s]) return s;
        return -1;
    };

    for (int s0 = 0; s0 < (int)segs.size(); ++s0) {
        if (used[s0]) continue;
        used[s0] = 1;
        std::vector<std::pair<int, bool>> chain{{s0, true}};  // (segment, ekey0->ekey1?)
        int64_t front_key = segs[s0].ekey0;
        int64_t back_key = segs[s0].ekey1;
        while (true) {  // extend at the back
            int nxt = next_unused(back_key);
            if (nxt < 0) break;
            bool fwd = segs[nxt].ekey0 == back_key;
            used[nxt] = 1;
            chain.push_back({nxt, fwd});
            back_key = fwd ? segs[nxt].ekey1 : segs[nxt].ekey0;
            if (back_key == front_key) break;
        }
        bool closed = back_key == front_key && chain.size() > 1;
        if (!closed) {
            std::vector<std::pair<int, bool>> head;
            while (true) {  // extend at the front
                int prv = next_unused(front_key);
                if (prv < 0) break;
                bool fwd = segs[prv].ekey1 == front_key;
                used[prv] = 1;
                head.push_back({prv, fwd});
                front_key = fwd ? segs[prv].ekey0 : segs[prv].ekey1;
            }
            chain.insert(chain.begin(), head.rbegin(), head.rend());
        }

        Polyline poly;
        poly.chart = chart;
        poly.closed = closed;
        auto entry_pt = [&](const std::pair<int, bool>& e) {
            return e.second ? segs[e.first].p0 : segs[e.first].p1;
        };
        auto exit_pt = [&](const std::pair<int, bool>& e) {
            return e.second ? segs[e.first].p1 : segs[e.first].p0;
        };
        poly.pts.push_back(entry_pt(chain[0]));
        for (const auto& e : chain) {
            Vec2 a = entry_pt(e), b = exit_pt(e);
            Vec2 shift{0, 0};
            if (c.periodic) {
                Vec2 d = poly.pts.back() - a;
                shift = {std::round(d.x), std::round(d.y)};
            }
            poly.pts.push_back(b + shift);
        }
        poly.finalize();
        if (poly.pts.size() >= 2) out.push_back(std::move(poly));
    }
    // deterministic order: by (min x, min y) of first point
    std::sort(out.begin(), out.end(), [](const Polyline& a, const Polyline& b) {
        if (a.pts[0].x != b.pts[0].x) return a.pts[0].x < b.pts[0].x;
        return a.pts[0].y < b.pts[0].y;
    });
    return out;
}

// Joins open chains whose endpoints fall within `tol` of each other (the
// level set of a capped tube function pinches to sub-cell width along stable
// corridors; the lost slivers contain no grid nodes). Chains that cannot be
// closed are returned as-is.
inline void stitch_open_chains(std::vector<Polyline>& polys, bool wrap, double tol) {
    auto wrap_d = [&](Vec2 d) {
        if (wrap) {
            d.x -= std::round(d.x);
            d.y -= std::round(d.y);
        }
        return d;
    };
    bool progress = true;
    while (progress) {
        progress = false;
        // endpoint registry over open chains
        double best = tol;
        int ba = -1, bb = -1;
        bool a_tail = false, b_tail = false;
        for (int a = 0; a < (int)polys.size(); ++a) {
            if (polys[a].closed) continue;
            for (int ae = 0; ae < 2; ++ae) {
                Vec2 pa = ae ? polys[a].pts.back() : polys[a].pts.front();
                for (int b = 0; b < (int)polys.size(); ++b) {
                    if (polys[b].closed) continue;
                    for (int be = 0; be < 2; ++be) {
                        if (a == b && ae == be) continue;
                        Vec2 pb = be ? polys[b].pts.back() : polys[b].pts.front();
                        double d = wrap_d(pb - pa).norm();
                        if (a == b) {
                            // self-closure: ends of one chain meet
                            if (d < best) {
                                best = d;
                                ba = a;
                                bb = b;
                                a_tail = ae;
                                b_tail = be;
                            }
                            continue;
                        }
                        if (d < best) {
                            best = d;
                            ba = a;
                            bb = b;
                            a_tail = ae;
                            b_tail = be;
                        }
                    }
                }
            }
        }
        if (ba < 0) break;
        if (ba == bb) {
            Polyline& A = polys[ba];
            A.pts.push_back(A.pts.back() + wrap_d(A.pts.front() - A.pts.back()));
            A.closed = true;
            A.finalize();
            progress = true;
            continue;
        }
        // join b onto a: orient so that a's chosen end meets b's chosen end
        Polyline& A = polys[ba];
        Polyline B = polys[bb];
        std::vector<Vec2> apts = A.pts, bpts = B.pts;
        if (!a_tail) std::reverse(apts.begin(), apts.end());
        if (b_tail) std::reverse(bpts.begin(), bpts.end());
        Vec2 anchor = apts.back();
        for (Vec2& p : bpts) {
            Vec2 d = wrap_d(p - anchor);
            p = anchor + d;
            anchor = p;
        }
        apts.insert(apts.end(), bpts.begin(), bpts.end());
        A.pts = std::move(apts);
        A.closed = false;
        A.finalize();
        polys.erase(polys.begin() + bb);
        progress = true;
    }
}

// 1-D "contour": positions where the sampled values cross the level.
struct LevelPoint {
    double x = 0;
    bool upward = false;  // value increases through the level in +x direction
};

inline std::vector<LevelPoint> level_points_1d(const GridSpec& g, const ScalarGrid& grid,
                                               double level) {
    const GridChart& c = g.charts[0];
    const auto& vals = grid.values[0];
    std::vector<LevelPoint> out;
    int cells = c.periodic ? c.nx : c.nx - 1;
    for (int i = 0; i < cells; ++i) {
        double a = vals[i], b = vals[c.wrap_i(i + 1)];
        if (std::isnan(a) || std::isnan(b)) continue;
        if ((a < level) == (b < level)) continue;
        double t = (level - a) / (b - a);
        out.push_back({c.x0 + (i + t) * c.h, b > a});
    }
    return out;
}

// ---------------------------------------------------------------------------
// binned segment index / chord crossing queries
// ---------------------------------------------------------------------------

struct ChordCrossing {
    double s_chord = 0;   // parameter along the chord
    int poly = -1;
    int seg = -1;
    double arclen = 0;    // arclength position of the hit on the polyline
    Vec2 point;
};

class SegmentIndex {
  public:
    SegmentIndex() = default;

    SegmentIndex(const std::vector<Polyline>* polys, bool wrap, double cell)
        : polys_(polys), wrap_(wrap), cell_(cell) {
        if (!polys_) return;
        for (int p = 0; p < (int)polys_->size(); ++p) {
            const Polyline& poly = (*polys_)[p];
            for (int s = 0; s + 1 < (int)poly.pts.size(); ++s) {
                Vec2 a = poly.pts[s], b = poly.pts[s + 1];
                insert_aabb(std::min(a.x, b.x), std::min(a.y, b.y), std::max(a.x, b.x),
                            std::max(a.y, b.y), p, s);
            }
        }
    }

    bool empty() const { return !polys_ || bins_.empty(); }

    // First crossing of the chord a->b (contiguous coordinates) with any
    // indexed segment; wrap-aware on periodic charts.
    std::optional<ChordCrossing> first_crossing(const Vec2& a, const Vec2& b) const {
        if (empty()) return std::nullopt;
        std::optional<ChordCrossing> best;
        double pad = 1e-9;
        double lox = std::min(a.x, b.x) - pad, hix = std::max(a.x, b.x) + pad;
        double loy = std::min(a.y, b.y) - pad, hiy = std::max(a.y, b.y) + pad;
        visit_bins(lox, loy, hix, hiy, [&](int p, int s) {
            const Polyline& poly = (*polys_)[p];
            Vec2 q0 = poly.pts[s], q1 = poly.pts[s + 1];
            if (wrap_) {
                // translate segment's lattice copy nearest to the chord start
                Vec2 d = q0 - a;
                Vec2 shift{-std::round(d.x), -std::round(d.y)};
                q0 += shift;
                q1 += shift;
            }
            auto hit = segment_intersect(a, b, q0, q1);
            if (!hit) return;
            if (!best || hit->s < best->s_chord) {
                ChordCrossing cc;
                cc.s_chord = hit->s;
                cc.poly = p;
                cc.seg = s;
                cc.arclen = poly.cum[s] + hit->t * (poly.cum[s + 1] - poly.cum[s]);
                cc.point = hit->point;
                best = cc;
            }
        });
        return best;
    }

  private:
    const std::vector<Polyline>* polys_ = nullptr;
    bool wrap_ = false;
    double cell_ = 0.01;
    std::unordered_map<int64_t, std::vector<std::pair<int, int>>> bins_;

    int64_t bin_key(int bx, int by) const { return (int64_t(by) << 24) ^ (bx & 0xFFFFFF); }

    int wrap_bin(int b) const {
        if (!wrap_) return b;
        int n = (int)std::llround(1.0 / cell_);
        return ((b % n) + n) % n;
    }

    void insert_aabb(double lox, double loy, double hix, double hiy, int p, int s) {
        int bx0 = (int)std::floor(lox / cell_), bx1 = (int)std::floor(hix / cell_);
        int by0 = (int)std::floor(loy / cell_), by1 = (int)std::floor(hiy / cell_);
        for (int by = by0; by <= by1; ++by)
            for (int bx = bx0; bx <= bx1; ++bx)
                bins_[bin_key(wrap_bin(bx), wrap_bin(by))].push_back({p, s});
    }

    template <typename F>
    void visit_bins(double lox, double loy, double hix, double hiy, F&& f) const {
        int bx0 = (int)std::floor(lox / cell_), bx1 = (int)std::floor(hix / cell_);
        int by0 = (int)std::floor(loy / cell_), by1 = (int)std::floor(hiy / cell_);
        for (int by = by0; by <= by1; ++by) {
            for (int bx = bx0; bx <= bx1; ++bx) {
                auto it = bins_.find(bin_key(wrap_bin(bx), wrap_bin(by)));
                if (it == bins_.end()) continue;
                for (auto [p, s] : it->second) f(p, s);
            }
        }
    }
};

}  // namespace energyforge

#endif
