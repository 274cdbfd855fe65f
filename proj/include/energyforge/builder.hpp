#ifndef ENERGYFORGE_BUILDER_HPP
#define ENERGYFORGE_BUILDER_HPP

// The inductive energy construction. Starting from the first sink's local
// chart, the function is extended stage by stage over the ordered fixed
// points: sink sublevels grow as disjoint quadratic balls, saddles attach
// flow-tube collars (V1..V4 regions plus the local block), sources cap their
// basins, and the final source closes the manifold. Values are assigned per
// grid node from hit-time queries against the previous stage's boundary
// contours and the saddle scaffolding.
//
// All flow times inside the builder use a uniformly rescaled field whose
// fastest linear rate is ln 2, so the unit-time tube caps stretch backward
// orbits by a bounded factor instead of e^{max|mu|}.

#include <atomic>
#include <cstdio>
#include <optional>
#include <sstream>

#include "energyforge/energy.hpp"
#include "energyforge/flowspec.hpp"
#include "energyforge/parallel.hpp"
#include "energyforge/smale_order.hpp"

namespace energyforge {

struct BuildError : std::runtime_error {
    int stage;
    BuildError(int s, const std::string& msg)
        : std::runtime_error("stage " + std::to_string(s) + ": " + msg), stage(s) {}
};

struct BuildParams {
    int grid_resolution = 256;
    double overshoot = 0.35;    // value band kept past each stage level for contouring
    double flag_budget = 1e-3;  // allowed fraction of failed tube nodes
    int max_halvings = 20;
    int sigma_samples = 96;     // samples along d_i / Sigma_i for hits
    int stop_after_stage = 0;   // diagnostics/tests: 0 = run every stage
};

struct SaddleStageInfo {
    int stage = 0;
    double chart_scale = 0;
    int sigma_minus_components = 0;  // components of Sigma_i^-
    int d_arc_count = 0;
    int c_point_count = 0;
    int q_point_count = 0;           // Sigma_i^- intersected with the unstable axis
    double t1_min = 0, t1_max = 0;
    double t2 = 0;
    double psi_spread = 0;
    int flagged = 0;
    int assigned = 0;
};

namespace detail {

// Crossing targets for stage queries: polylines with (kind, id) metadata,
// queryable from either sphere chart.
class CrossingField {
  public:
    static constexpr int kBoundary = 0;
    static constexpr int kDArc = 1;
    static constexpr int kDMinus = 2;
    static constexpr int kSigma = 3;
    static constexpr int kCommitted = 4;  // value-based fallback entry

    explicit CrossingField(const ManifoldSpec& m) : m_(m) {
        per_chart_.resize(m.chart_count());
        meta_.resize(m.chart_count());
    }

    void add(const Polyline& poly, int kind, int id) {
        per_chart_[poly.chart].push_back(poly);
        meta_[poly.chart].push_back({kind, id});
    }

    void build(double cell) {
        index_.clear();
        for (int c = 0; c < (int)per_chart_.size(); ++c)
            index_.emplace_back(&per_chart_[c], m_.periodic(), cell);
    }

    bool chart_has_targets(int chart) const { return !per_chart_[chart].empty(); }

    struct Hit {
        double time = 0;
        int kind = -1;
        int id = -1;
        double arclen = 0;
        Vec2 point;
    };

    // First crossing along the orbit from start. max_chord keeps integration
    // chords comparable to the polyline segment scale. When inside_probe is
    // set and the orbit enters the probed region without a polyline crossing
    // (the level set pinches below cell width along stable corridors), a
    // kCommitted hit is synthesized at the entry time.
    std::optional<Hit> first_hit(const FlowSystem& sys, const ChartPoint& start, bool forward,
                                 double t_max, double max_chord,
                                 const std::function<bool(const ChartPoint&)>& inside_probe =
                                     nullptr) const {
        std::optional<Hit> found;
        IntegrateOptions opt;
        opt.max_chord = max_chord;
        double sgn = forward ? 1.0 : -1.0;
        integrate_steps(sys, start, sgn * t_max, opt,
                        [&](double t0, const ChartPoint& p0, double t1, const ChartPoint& p1) {
                            Vec2 a{p0.x[0], p0.x[1]}, b{p1.x[0], p1.x[1]};
                            std::optional<ChordCrossing> best;
                            int best_chart = -1;
                            query_chord(p0.chart, a, b, best, best_chart);
                            if (m_.kind == ManifoldKind::Sphere)
                                query_mapped(p0.chart, a, b, best, best_chart);
                            if (best) {
                                Hit h;
                                h.time = std::abs(t0) +
                                         best->s_chord * (std::abs(t1) - std::abs(t0));
                                h.kind = meta_[best_chart][best->poly].first;
                                h.id = meta_[best_chart][best->poly].second;
                                h.arclen = best->arclen;
                                h.point = best->point;
                                found = h;
                                return false;
                            }
                            if (inside_probe && inside_probe(p1)) {
                                // refine the entry time by bisection
                                double lo = std::abs(t0), hi = std::abs(t1);
                                ChartPoint pl = p0;
                                for (int it = 0; it < 10 && hi - lo > 1e-9; ++it) {
                                    double mid = 0.5 * (lo + hi);
                                    ChartPoint pm =
                                        flow_to(sys, pl, sgn * (mid - lo));
                                    if (inside_probe(pm)) {
                                        hi = mid;
                                    } else {
                                        lo = mid;
                                        pl = pm;
                                    }
                                }
                                Hit h;
                                h.time = hi;
                                h.kind = kCommitted;
                                ChartPoint pe = flow_to(sys, pl, sgn * (hi - lo));
                                h.point = {pe.x[0], pe.x[1]};
                                h.id = pe.chart;  // chart, resolved by the caller
                                found = h;
                                return false;
                            }
                            return true;
                        });
        return found;
    }

  private:
    ManifoldSpec m_;
    std::vector<std::vector<Polyline>> per_chart_;
    std::vector<std::vector<std::pair<int, int>>> meta_;
    std::vector<SegmentIndex> index_;

    void query_chord(int chart, const Vec2& a, const Vec2& b, std::optional<ChordCrossing>& best,
                     int& best_chart) const {
        if (per_chart_[chart].empty()) return;
        auto hit = index_[chart].first_crossing(a, b);
        if (hit && (!best || hit->s_chord < best->s_chord)) {
            best = hit;
            best_chart = chart;
        }
    }

    // Sphere: targets stored in the other chart are queried through the
    // transition (short chords map to near-straight chords).
    void query_mapped(int chart, const Vec2& a, const Vec2& b, std::optional<ChordCrossing>& best,
                      int& best_chart) const {
        int other = 1 - chart;
        if (per_chart_[other].empty()) return;
        double ra = a.norm2(), rb = b.norm2();
        if (ra < 1e-8 || rb < 1e-8) return;
        Vec2 ma = a / ra, mb = b / rb;
        if (ma.norm() > kSphereChartMax + 0.6 || mb.norm() > kSphereChartMax + 0.6) return;
        auto hit = index_[other].first_crossing(ma, mb);
        if (hit && (!best || hit->s_chord < best->s_chord)) {
            best = hit;
            best_chart = other;
        }
    }
};

// First passage through target positions on the circle.
struct Passage1D {
    double time = 0;
    int id = -1;
};

inline std::optional<Passage1D> first_passage_1d(const FlowSystem& sys, const ChartPoint& start,
                                                 const std::vector<double>& targets, bool forward,
                                                 double t_max, double max_chord) {
    std::optional<Passage1D> found;
    IntegrateOptions opt;
    opt.max_chord = max_chord;
    integrate_steps(sys, start, forward ? t_max : -t_max, opt,
                    [&](double t0, const ChartPoint& p0, double t1, const ChartPoint& p1) {
                        double a = p0.x[0], b = p1.x[0];
                        double best_s = 2.0;
                        int best_id = -1;
                        for (int id = 0; id < (int)targets.size(); ++id) {
                            double tau = targets[id];
                            if (sys.manifold.periodic()) tau += std::round(a - targets[id]);
                            if ((tau - a) * (tau - b) > 0 || a == b) continue;
                            double s = (tau - a) / (b - a);
                            if (s < best_s) {
                                best_s = s;
                                best_id = id;
                            }
                        }
                        if (best_id < 0) return true;
                        found = Passage1D{std::abs(t0) + best_s * (std::abs(t1) - std::abs(t0)),
                                          best_id};
                        return false;
                    });
    return found;
}

}  // namespace detail

class EnergyBuilder {
  public:
    EnergyBuilder(const FlowSystem& sys, const OrderedSpectrum& spec, const BuildParams& params)
        : sys0_(sys), spec_(spec), params_(params) {
        if (!sys.manifold.closed())
            throw BuildError(0, "full energy construction requires a closed manifold "
                                "(circle, torus or sphere)");
        if (spec_.order.empty()) throw BuildError(0, "no fixed points to build from");
        double max_rate = 0;
        for (const auto& r : spec_.records) max_rate = std::max(max_rate, r.max_rate());
        time_scale_ = max_rate / std::log(2.0);
        sys_ = sys0_.time_scaled(time_scale_);
        grid_ = GridSpec::make(sys.manifold, params.grid_resolution);
        h_ = grid_.spacing();
        t_max_ = sys.builder_t_max;
    }

    EnergyField build() {
        const auto& records = spec_.records;
        int k = (int)spec_.order.size();
        if (records[spec_.order.front()].kind != PointKind::Sink)
            throw BuildError(1, "the first point of the order must be a sink");
        if (records[spec_.order.back()].kind != PointKind::Source)
            throw BuildError(k, "the last point of the order must be a source");

        field_.init(grid_);
        provisional_.resize(grid_.charts.size());
        for (size_t c = 0; c < grid_.charts.size(); ++c)
            provisional_[c].assign(grid_.charts[c].node_count(), 0);
        chart_scale_.assign(records.size(), 0.0);

        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "# energy build\nk = %d\ngrid = %d\ntime_scale = %.10g\novershoot = %.3g\n",
                      k, params_.grid_resolution, time_scale_, params_.overshoot);
        log_ << buf;

        for (int stage = 1; stage <= k; ++stage) {
            const FixedPointRecord& rec = records[spec_.order[stage - 1]];
            switch (rec.kind) {
                case PointKind::Sink: stage_sink(stage); break;
                case PointKind::Saddle: stage_saddle(stage); break;
                case PointKind::Source:
                    stage_source(stage, stage == k);
                    break;
            }
            if (stage < k) extract_boundary(stage);
            if (params_.stop_after_stage > 0 && stage >= params_.stop_after_stage) break;
        }
        if (params_.stop_after_stage == 0 || params_.stop_after_stage >= k)
            finalize_coverage(k);

        field_.k = k;
        field_.spec_hash = fnv1a_hash(sys0_.source_text);
        field_.time_scale = time_scale_;
        for (int s = 1; s <= k; ++s) {
            field_.points.push_back(records[spec_.order[s - 1]].location);
            field_.point_lambda.push_back(records[spec_.order[s - 1]].lambda);
        }
        return std::move(field_);
    }

    const std::string log() const { return log_.str(); }
    const std::vector<SaddleStageInfo>& saddle_info() const { return saddle_info_; }
    double time_scale() const { return time_scale_; }
    const std::vector<Polyline>& boundary() const { return boundary_; }
    const std::vector<LevelPoint>& boundary_1d() const { return boundary1d_; }

  private:
    const FlowSystem& sys0_;
    FlowSystem sys_;
    OrderedSpectrum spec_;
    BuildParams params_;
    GridSpec grid_;
    double h_ = 0;
    double t_max_ = 200;
    double time_scale_ = 1;
    EnergyField field_;
    std::vector<std::vector<char>> provisional_;
    std::vector<double> chart_scale_;
    std::vector<Polyline> boundary_;       // 2-D boundary components of the last stage
    std::vector<LevelPoint> boundary1d_;   // 1-D boundary points
    bool sink_scales_done_ = false;
    std::ostringstream log_;
    std::vector<SaddleStageInfo> saddle_info_;

    static double level_of(int stage) { return stage + 1.0 / 3.0; }

    const FixedPointRecord& record_at(int stage) const {
        return spec_.records[spec_.order[stage - 1]];
    }
    int record_id(int stage) const { return spec_.order[stage - 1]; }

    bool committed(int chart, int64_t idx) const {
        return !std::isnan(field_.phi.values[chart][idx]) && !provisional_[chart][idx];
    }
    bool defined_any(int chart, int64_t idx) const {
        return !std::isnan(field_.phi.values[chart][idx]);
    }

    void write_node(int chart, int64_t idx, double value, RegionTag tag, int stage,
                    bool provisional) {
        field_.phi.values[chart][idx] = value;
        field_.tag[chart][idx] = (uint8_t)tag;
        field_.stage[chart][idx] = (int16_t)stage;
        provisional_[chart][idx] = provisional ? 1 : 0;
    }

    // interpolated membership of a point in the committed region
    bool point_in_committed(const ChartPoint& p0, double max_level) const {
        for (int chart = 0; chart < (int)grid_.charts.size(); ++chart) {
            ChartPoint p = p0;
            if (p.chart != chart) {
                if (sys_.manifold.kind != ManifoldKind::Sphere) continue;
                if (p.vec().norm() < 1e-12) continue;
                p = sys_.manifold.to_chart(p, chart);
            }
            sys_.manifold.normalize(p);
            const GridChart& c = grid_.charts[chart];
            int i = (int)std::floor((p.x[0] - c.x0) / c.h + 0.5);
            int j = c.ny == 1 ? 0 : (int)std::floor((p.x[1] - c.y0) / c.h + 0.5);
            i = c.wrap_i(i);
            j = c.wrap_j(j);
            if (!c.node_valid(i, j)) continue;
            int64_t idx = c.index(i, j);
            if (committed(chart, idx) && field_.phi.values[chart][idx] <= max_level + 1e-12)
                return true;
        }
        return false;
    }

    // Probe for the value-based crossing fallback: true when the point lies in
    // a fully committed cell with interpolated value <= level.
    std::function<bool(const ChartPoint&)> committed_probe(double level) const {
        return [this, level](const ChartPoint& p0) {
            for (int chart = 0; chart < (int)grid_.charts.size(); ++chart) {
                ChartPoint p = p0;
                if (p.chart != chart) {
                    if (sys_.manifold.kind != ManifoldKind::Sphere) continue;
                    if (p.vec().norm() < 1e-12) continue;
                    p = sys_.manifold.to_chart(p, chart);
                    if (p.vec().norm() > kSphereChartMax) continue;
                }
                sys_.manifold.normalize(p);
                const GridChart& c = grid_.charts[chart];
                double fx = (p.x[0] - c.x0) / c.h;
                int i0 = (int)std::floor(fx);
                double tx = fx - i0;
                if (c.ny == 1) {
                    int ia = c.wrap_i(i0), ib = c.wrap_i(i0 + 1);
                    if (!c.node_valid(ia, 0) || !c.node_valid(ib, 0)) continue;
                    int64_t a = c.index(ia, 0), b = c.index(ib, 0);
                    if (!committed(chart, a) || !committed(chart, b)) continue;
                    double v = field_.phi.values[chart][a] * (1 - tx) +
                               field_.phi.values[chart][b] * tx;
                    if (v <= level + 1e-9) return true;
                    continue;
                }
                double fy = (p.x[1] - c.y0) / c.h;
                int j0 = (int)std::floor(fy);
                double ty = fy - j0;
                int ia = c.wrap_i(i0), ja = c.wrap_j(j0);
                int ib = c.wrap_i(i0 + 1), jb = c.wrap_j(j0 + 1);
                if (!c.node_valid(ia, ja) || !c.node_valid(ib, jb)) continue;
                int64_t n00 = c.index(ia, ja), n10 = c.index(ib, ja);
                int64_t n01 = c.index(ia, jb), n11 = c.index(ib, jb);
                if (!committed(chart, n00) || !committed(chart, n10) ||
                    !committed(chart, n01) || !committed(chart, n11))
                    continue;
                const auto& vals = field_.phi.values[chart];
                double v = (vals[n00] * (1 - tx) + vals[n10] * tx) * (1 - ty) +
                           (vals[n01] * (1 - tx) + vals[n11] * tx) * ty;
                if (v <= level + 1e-9) return true;
            }
            return false;
        };
    }

    // Nearest boundary component and arclength position (wrap-aware).
    std::pair<int, double> nearest_on_boundary(const Vec2& point, int chart) const {
        int best_comp = -1;
        double best_d2 = std::numeric_limits<double>::infinity(), best_arc = 0;
        for (int bid = 0; bid < (int)boundary_.size(); ++bid) {
            const Polyline& poly = boundary_[bid];
            Vec2 q = point;
            if (poly.chart != chart) {
                if (sys_.manifold.kind != ManifoldKind::Sphere) continue;
                double r2 = q.norm2();
                if (r2 < 1e-12) continue;
                q = q / r2;
            }
            for (size_t s = 0; s + 1 < poly.pts.size(); ++s) {
                Vec2 a = poly.pts[s], b = poly.pts[s + 1];
                if (sys_.manifold.periodic()) {
                    Vec2 d = a - q;
                    Vec2 shift{-std::round(d.x), -std::round(d.y)};
                    a += shift;
                    b += shift;
                }
                double d2 = point_segment_dist2(q, a, b);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best_comp = bid;
                    Vec2 ab = b - a;
                    double t = ab.norm2() > 0
                                   ? std::clamp((q - a).dot(ab) / ab.norm2(), 0.0, 1.0)
                                   : 0.0;
                    best_arc = poly.cum[s] + t * (poly.cum[s + 1] - poly.cum[s]);
                }
            }
        }
        return {best_comp, best_arc};
    }

    double dist_to_boundary(const ChartPoint& p) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& poly : boundary_) {
            if (poly.chart != p.chart) {
                if (sys_.manifold.kind != ManifoldKind::Sphere) continue;
            }
            ChartPoint q = p;
            if (q.chart != poly.chart) {
                if (q.vec().norm() < 1e-12) continue;
                q = sys_.manifold.to_chart(q, poly.chart);
            }
            Vec2 v = q.vec();
            size_t step = std::max<size_t>(1, poly.pts.size() / 512);
            for (size_t s = 0; s < poly.pts.size(); s += step) {
                Vec2 d = poly.pts[s] - v;
                if (sys_.manifold.periodic()) {
                    d.x -= std::round(d.x);
                    d.y -= std::round(d.y);
                }
                best = std::min(best, d.norm());
            }
        }
        for (const auto& lp : boundary1d_) {
            double d = std::abs(lp.x - p.x[0]);
            if (sys_.manifold.periodic()) d = std::min(d, 1.0 - d);
            best = std::min(best, d);
        }
        return best;
    }

    // ------------------------------------------------------------------
    // sinks
    // ------------------------------------------------------------------

    int last_sink_stage() const {
        int m = 0;
        for (int s = 1; s <= (int)spec_.order.size(); ++s)
            if (record_at(s).kind == PointKind::Sink) m = s;
        return m;
    }

    double sink_geom_radius(int stage_s, double scale) const {
        const FixedPointRecord& rec = record_at(stage_s);
        double rho = std::sqrt(last_sink_stage() + 1.0 / 3.0 + params_.overshoot - stage_s);
        return rec.frame_norm * rho / scale;
    }

    void resolve_sink_scales() {
        int m = last_sink_stage();
        std::vector<int> sink_stages;
        for (int s = 1; s <= m; ++s)
            if (record_at(s).kind == PointKind::Sink) sink_stages.push_back(s);
        for (int s : sink_stages) {
            const FixedPointRecord& rec = record_at(s);
            double rho = std::sqrt(m + 1.0 / 3.0 + params_.overshoot - s);
            chart_scale_[record_id(s)] = 1.02 * rec.frame_norm * rho / rec.r_p;
        }
        // sampled suffix stable sets (everything after the sinks)
        std::vector<ChartPoint> avoid;
        for (int s = m + 1; s <= (int)spec_.order.size(); ++s) {
            avoid.push_back(record_at(s).location);
            const auto& tr = spec_.stable[record_id(s)];
            for (const auto& b : tr.branches) {
                size_t step = std::max<size_t>(1, b.curve.samples.size() / 200);
                for (size_t i = 0; i < b.curve.samples.size(); i += step)
                    avoid.push_back(b.curve.samples[i].point);
            }
        }
        for (int round = 0; round < params_.max_halvings; ++round) {
            bool conflict = false;
            for (size_t a = 0; a < sink_stages.size(); ++a) {
                int sa = sink_stages[a];
                double ra = sink_geom_radius(sa, chart_scale_[record_id(sa)]);
                for (size_t b = a + 1; b < sink_stages.size(); ++b) {
                    int sb = sink_stages[b];
                    double rb = sink_geom_radius(sb, chart_scale_[record_id(sb)]);
                    double d = sys_.manifold.distance(record_at(sa).location,
                                                      record_at(sb).location);
                    if (d <= ra + rb + 2 * h_) {
                        chart_scale_[record_id(sa)] *= 2;
                        chart_scale_[record_id(sb)] *= 2;
                        conflict = true;
                    }
                }
                for (const ChartPoint& p : avoid) {
                    if (sys_.manifold.distance(record_at(sa).location, p) <= ra + 2 * h_) {
                        chart_scale_[record_id(sa)] *= 2;
                        conflict = true;
                        break;
                    }
                }
            }
            if (!conflict) {
                sink_scales_done_ = true;
                return;
            }
        }
        throw BuildError(1, "sink regions cannot be made disjoint (rescale limit)");
    }

    void stage_sink(int stage) {
        for (int s = 1; s < stage; ++s)
            if (record_at(s).kind != PointKind::Sink)
                throw BuildError(stage, "sink stages must precede all other stages");
        if (!sink_scales_done_) resolve_sink_scales();
        double limit = level_of(stage) + params_.overshoot;

        std::atomic<int64_t> overlap(0), assigned(0);
        for (int chart = 0; chart < (int)grid_.charts.size(); ++chart) {
            const GridChart& c = grid_.charts[chart];
            parallel_for(c.node_count(), [&](int64_t idx) {
                int i = (int)(idx % c.nx), j = (int)(idx / c.nx);
                if (!grid_.node_active(chart, i, j)) return;
                ChartPoint y = grid_.node_point(chart, i, j);
                double best = std::numeric_limits<double>::infinity();
                int best_stage = -1;
                int hits_committed = 0;
                for (int s = 1; s <= stage; ++s) {
                    const FixedPointRecord& rec = record_at(s);
                    if (rec.kind != PointKind::Sink) continue;
                    Vec2 x;
                    try {
                        x = rec.eigen_coords(sys_.manifold, y, chart_scale_[record_id(s)]);
                    } catch (const std::exception&) {
                        continue;  // chart transition undefined (opposite pole)
                    }
                    // the quadratic is trusted only inside the chart ball
                    Vec2 d = rec.frame.inverse().apply(x) / chart_scale_[record_id(s)];
                    if (d.norm() > rec.r_p * 1.02) continue;
                    double value = s + x.norm2();
                    if (value > limit) continue;
                    if (value <= level_of(stage)) ++hits_committed;
                    if (value < best) {
                        best = value;
                        best_stage = s;
                    }
                }
                if (best_stage < 0) return;
                if (hits_committed > 1) ++overlap;
                int64_t nidx = c.index(i, j);
                if (committed(chart, nidx)) return;  // stage monotonicity
                write_node(chart, nidx, best, RegionTag::Chart, best_stage,
                           best > level_of(stage));
                ++assigned;
            });
        }
        if (overlap > 0)
            throw BuildError(stage, "two sink regions overlap at level i+1/3 (" +
                                        std::to_string((long long)overlap) + " nodes)");
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "stage %d sink: record=%d scale=%.6g assigned=%lld\n", stage,
                      record_id(stage), chart_scale_[record_id(stage)],
                      (long long)assigned.load());
        log_ << buf;
    }

    // ------------------------------------------------------------------
    // saddle stage (n = 2, lambda = 1)
    // ------------------------------------------------------------------

    Polyline eigen_arc_to_manifold(const FixedPointRecord& rec, double scale,
                                   const std::vector<Vec2>& eigen_pts) const {
        Polyline poly;
        poly.chart = rec.location.chart;
        Vec2 prev;
        for (size_t s = 0; s < eigen_pts.size(); ++s) {
            ChartPoint p = rec.from_eigen(sys_.manifold, eigen_pts[s], scale);
            Vec2 v = p.vec();
            if (s > 0 && sys_.manifold.periodic()) {
                Vec2 d = v - prev;
                d.x -= std::round(d.x);
                d.y -= std::round(d.y);
                v = prev + d;
            }
            poly.pts.push_back(v);
            prev = v;
        }
        poly.finalize();
        return poly;
    }

    void stage_saddle(int stage) {
        const FixedPointRecord& rec = record_at(stage);
        if (sys_.manifold.dimension != 2)
            throw BuildError(stage, "saddle stages require a 2-manifold");
        const double q_limit = std::sqrt(7.0 / 48.0);  // |x_u x_s| on the c_i orbits
        const double Li = level_of(stage), prev_level = level_of(stage - 1);
        const double over = params_.overshoot;

        // eigen extent of the scaffold including the overshoot band of K_i
        double t_k;  // x_u^2 at the Sigma^+(+overshoot) corner of the cylinder
        {
            double bb = 1.0 / 3.0 + over;
            t_k = (-bb + std::sqrt(bb * bb + 4 * q_limit * q_limit)) / 2.0;
        }
        double rho_need = std::max(std::sqrt(7.0 / 12.0 + 0.25),
                                   std::sqrt(t_k + t_k + 1.0 / 3.0 + over)) *
                          1.05;

        double scale = 1.02 * rec.frame_norm * rho_need / rec.r_p;
        std::vector<Polyline> d_arcs;
        std::vector<ChartPoint> c_pts;
        std::vector<Vec2> c_eigen = {{std::sqrt(7.0 / 12.0), 0.5},
                                     {std::sqrt(7.0 / 12.0), -0.5},
                                     {-std::sqrt(7.0 / 12.0), 0.5},
                                     {-std::sqrt(7.0 / 12.0), -0.5}};
        int halvings = 0;
        for (;; ++halvings) {
            if (halvings > params_.max_halvings)
                throw BuildError(stage, "d_i cannot be made disjoint from U_{i-1}");
            d_arcs.clear();
            c_pts.clear();
            int per_arc = params_.sigma_samples;
            for (double side : {1.0, -1.0}) {
                std::vector<Vec2> eigen_pts;
                for (int s = 0; s <= per_arc; ++s) {
                    double xs = -0.5 + s / double(per_arc);
                    eigen_pts.push_back({side * std::sqrt(xs * xs + 1.0 / 3.0), xs});
                }
                d_arcs.push_back(eigen_arc_to_manifold(rec, scale, eigen_pts));
            }
            for (const Vec2& ce : c_eigen) c_pts.push_back(rec.from_eigen(sys_.manifold, ce, scale));
            bool conflict = false;
            for (const auto& arc : d_arcs) {
                for (size_t s = 0; s < arc.pts.size(); s += 4) {
                    ChartPoint p(arc.chart, arc.pts[s].x, arc.pts[s].y);
                    sys_.manifold.normalize(p);
                    if (point_in_committed(p, prev_level + over) ||
                        dist_to_boundary(p) < 2 * h_) {
                        conflict = true;
                        break;
                    }
                }
                if (conflict) break;
            }
            if (!conflict) break;
            scale *= 2;
        }
        chart_scale_[record_id(stage)] = scale;

        LocalMorseChart phi_local = local_morse(rec, stage, scale);

        // scaffold topology cross-check on a local eigen grid
        SaddleStageInfo info;
        info.stage = stage;
        info.chart_scale = scale;
        info.d_arc_count = (int)d_arcs.size();
        info.c_point_count = (int)c_pts.size();
        {
            ManifoldSpec plane;
            plane.kind = ManifoldKind::PlaneDisk;
            plane.radius = 1.3;
            GridSpec local = GridSpec::make(plane, 96);
            ScalarGrid vals(local);
            const GridChart& lc = local.charts[0];
            for (int j = 0; j < lc.ny; ++j)
                for (int i = 0; i < lc.nx; ++i) {
                    Vec2 x = lc.position(i, j);
                    vals.at(local, 0, i, j) = stage - x.x * x.x + x.y * x.y;
                }
            auto sigma_minus = marching_squares(local, vals, 0, stage - 1.0 / 3.0);
            info.sigma_minus_components = 0;
            info.q_point_count = 0;
            for (const auto& poly : sigma_minus) {
                if (poly.length() < 0.2) continue;
                ++info.sigma_minus_components;
                for (size_t s = 0; s + 1 < poly.pts.size(); ++s)
                    if ((poly.pts[s].y <= 0) != (poly.pts[s + 1].y <= 0)) ++info.q_point_count;
            }
        }

        // forward hits of the c points onto the previous boundary
        detail::CrossingField boundary_targets(sys_.manifold);
        for (int bid = 0; bid < (int)boundary_.size(); ++bid)
            boundary_targets.add(boundary_[bid], detail::CrossingField::kBoundary, bid);
        boundary_targets.build(bin_cell());

        auto probe = committed_probe(prev_level);
        auto resolve = [&](detail::CrossingField::Hit& h) {
            if (h.kind != detail::CrossingField::kCommitted) return true;
            auto [comp, arc] = nearest_on_boundary(h.point, h.id);
            if (comp < 0) return false;
            h.kind = detail::CrossingField::kBoundary;
            h.id = comp;
            h.arclen = arc;
            return true;
        };
        struct CHit {
            int comp;
            double arclen;
            double t1;
        };
        std::vector<CHit> c_hits;
        for (const ChartPoint& cp : c_pts) {
            auto hit = boundary_targets.first_hit(sys_, cp, true, t_max_, 4 * h_, probe);
            if (!hit || !resolve(*hit))
                throw BuildError(stage,
                                 "forward orbit from c_i never meets the previous boundary "
                                 "(ordering assumption broken)");
            c_hits.push_back({hit->id, hit->arclen, hit->time});
        }
        info.t1_min = info.t1_max = c_hits[0].t1;
        for (const auto& ch : c_hits) {
            info.t1_min = std::min(info.t1_min, ch.t1);
            info.t1_max = std::max(info.t1_max, ch.t1);
            if (!(ch.t1 > 0)) throw BuildError(stage, "t_1 <= 0 on d_{i-1}");
        }

        // forward hits of d samples classify the d-intervals per component
        std::vector<std::pair<int, double>> d_hits;  // (component, arclen)
        {
            std::vector<std::optional<std::pair<int, double>>> results;
            std::vector<ChartPoint> starts;
            for (const auto& arc : d_arcs)
                for (size_t s = 0; s < arc.pts.size(); s += 3) {
                    ChartPoint p(arc.chart, arc.pts[s].x, arc.pts[s].y);
                    sys_.manifold.normalize(p);
                    starts.push_back(p);
                }
            results.resize(starts.size());
            std::atomic<int> misses(0);
            parallel_for((int64_t)starts.size(), [&](int64_t s) {
                auto hit = boundary_targets.first_hit(sys_, starts[s], true, t_max_, 4 * h_,
                                                      probe);
                if (hit && resolve(*hit)) results[s] = std::make_pair(hit->id, hit->arclen);
                else ++misses;
            });
            if (misses > (int)starts.size() / 10)
                throw BuildError(stage, "d_i orbits fail to reach the previous boundary");
            for (auto& r : results)
                if (r) d_hits.push_back(*r);
        }

        // per-component interval bookkeeping
        struct DGap {
            double a = 0, b = 0;    // arclength span (cyclic)
            double t1a = 0, t1b = 0;  // c-point times at the ends
        };
        struct CompInfo {
            bool is_S = false;
            std::vector<double> c_pos;
            std::vector<double> c_t1;
            std::vector<DGap> d_gaps;
            double depth = 0;
        };
        std::vector<CompInfo> comps(boundary_.size());
        for (const auto& ch : c_hits) {
            comps[ch.comp].is_S = true;
            comps[ch.comp].c_pos.push_back(ch.arclen);
            comps[ch.comp].c_t1.push_back(ch.t1);
        }
        for (int bid = 0; bid < (int)boundary_.size(); ++bid) {
            CompInfo& ci = comps[bid];
            if (!ci.is_S) continue;
            double L = boundary_[bid].length();
            // sort c positions together with their times
            std::vector<int> ord(ci.c_pos.size());
            for (size_t s = 0; s < ord.size(); ++s) ord[s] = (int)s;
            std::sort(ord.begin(), ord.end(),
                      [&](int a, int b) { return ci.c_pos[a] < ci.c_pos[b]; });
            std::vector<double> pos, t1;
            for (int s : ord) {
                pos.push_back(ci.c_pos[s]);
                t1.push_back(ci.c_t1[s]);
            }
            ci.c_pos = pos;
            ci.c_t1 = t1;
            if (ci.c_pos.size() % 2 != 0)
                throw BuildError(stage, "odd number of c_{i-1} points on one boundary component");
            // classify cyclic gaps by the d hits they contain
            int m = (int)ci.c_pos.size();
            std::vector<int> gap_hits(m, 0);
            for (const auto& dh : d_hits) {
                if (dh.first != bid) continue;
                for (int g = 0; g < m; ++g) {
                    double a = ci.c_pos[g], b = ci.c_pos[(g + 1) % m];
                    bool inside = a <= b ? (dh.second >= a && dh.second <= b)
                                         : (dh.second >= a || dh.second <= b);
                    if (inside) {
                        ++gap_hits[g];
                        break;
                    }
                }
            }
            double min_b_gap = L;
            for (int g = 0; g < m; ++g) {
                double a = ci.c_pos[g], b = ci.c_pos[(g + 1) % m];
                double len = a <= b ? b - a : L - a + b;
                if (gap_hits[g] >= 2) {
                    ci.d_gaps.push_back({a, b, ci.c_t1[g], ci.c_t1[(g + 1) % m]});
                } else {
                    min_b_gap = std::min(min_b_gap, len);
                }
            }
            if (ci.d_gaps.empty())
                throw BuildError(stage, "boundary component with c points but no d interval");
            // grid-independent collar depth: the T1 interpolation cliff then
            // has a fixed gradient and the seam error scales with h
            ci.depth = std::min(L / 4.0, 0.45 * min_b_gap);
        }

        // T1 on a component at arc position a (outside the d intervals)
        auto collar_T1 = [&](int bid, double a) {
            const CompInfo& ci = comps[bid];
            const Polyline& poly = boundary_[bid];
            double best = 1.0;
            for (size_t s = 0; s < ci.c_pos.size(); ++s) {
                double dist = poly.arc_distance(a, ci.c_pos[s]);
                if (dist < ci.depth) {
                    double tau = dist / ci.depth;
                    best = ci.c_t1[s] + tau * (1.0 - ci.c_t1[s]);
                }
            }
            return best;
        };
        // returns the d gap containing arclength a, or nullptr
        auto find_d_gap = [&](int bid, double a) -> const DGap* {
            for (const auto& g : comps[bid].d_gaps) {
                bool inside = g.a <= g.b ? (a >= g.a && a <= g.b) : (a >= g.a || a <= g.b);
                if (inside) return &g;
            }
            return nullptr;
        };

        // psi table from a representative c point
        std::vector<double> psi_t{0.0}, psi_v{stage - 1.0 / 3.0};
        double t2 = 0, t2_ext = 0;
        {
            const ChartPoint& rep = c_pts[0];
            double upper = Li + over + 0.02;
            IntegrateOptions opt;
            opt.max_step = 0.01;
            integrate_steps(sys_, rep, -t_max_, opt,
                            [&](double, const ChartPoint&, double t1v, const ChartPoint& p1) {
                                double v = phi_local.eval(sys_.manifold, p1, false);
                                psi_t.push_back(std::abs(t1v));
                                psi_v.push_back(v);
                                return v < upper;
                            });
            if (psi_v.back() < Li)
                throw BuildError(stage, "backward orbit from c_i never reaches level i+1/3");
            for (size_t s = 1; s < psi_v.size(); ++s)
                if (psi_v[s] <= psi_v[s - 1])
                    throw BuildError(stage, "non-monotone psi along the c_i orbit");
            auto psi_at_level = [&](double lv) {
                auto it = std::lower_bound(psi_v.begin(), psi_v.end(), lv);
                size_t hi = std::min(psi_v.size() - 1, size_t(it - psi_v.begin()));
                size_t lo = hi > 0 ? hi - 1 : 0;
                double den = psi_v[hi] - psi_v[lo];
                double u = den > 0 ? (lv - psi_v[lo]) / den : 0.0;
                return psi_t[lo] + u * (psi_t[hi] - psi_t[lo]);
            };
            t2 = psi_at_level(Li);
            t2_ext = psi_at_level(Li + over);
            // spread across the other c points
            double spread = 0;
            for (size_t cother = 1; cother < c_pts.size(); ++cother) {
                for (double frac : {0.3, 0.7, 1.0}) {
                    double t = frac * t2;
                    ChartPoint p = flow_to(sys_, c_pts[cother], -t);
                    double v = phi_local.eval(sys_.manifold, p, false);
                    // interpolate table at t
                    auto it = std::lower_bound(psi_t.begin(), psi_t.end(), t);
                    size_t hi = std::min(psi_t.size() - 1, size_t(it - psi_t.begin()));
                    size_t lo = hi > 0 ? hi - 1 : 0;
                    double den = psi_t[hi] - psi_t[lo];
                    double u = den > 0 ? (t - psi_t[lo]) / den : 0.0;
                    double tab = psi_v[lo] + u * (psi_v[hi] - psi_v[lo]);
                    spread = std::max(spread, std::abs(v - tab));
                }
            }
            info.psi_spread = spread;
            if (spread > 1e-4) {
                char buf[128];
                std::snprintf(buf, sizeof buf,
                              "stage %d warning: psi spread %.3g exceeds 1e-4\n", stage, spread);
                log_ << buf;
            }
        }
        info.t2 = t2;
        auto psi_of = [&](double t) {
            auto it = std::lower_bound(psi_t.begin(), psi_t.end(), t);
            size_t hi = std::min(psi_t.size() - 1, size_t(it - psi_t.begin()));
            size_t lo = hi > 0 ? hi - 1 : 0;
            double den = psi_t[hi] - psi_t[lo];
            double u = den > 0 ? (t - psi_t[lo]) / den : 0.0;
            return psi_v[lo] + u * (psi_v[hi] - psi_v[lo]);
        };

        // combined crossing targets for the per-node queries
        detail::CrossingField targets(sys_.manifold);
        for (int bid = 0; bid < (int)boundary_.size(); ++bid)
            targets.add(boundary_[bid], detail::CrossingField::kBoundary, bid);
        for (int aid = 0; aid < (int)d_arcs.size(); ++aid)
            targets.add(d_arcs[aid], detail::CrossingField::kDArc, aid);
        targets.build(bin_cell());

        // backward time to the Sigma_i^- level (phi_{p_i,i} = i - 1/3), located
        // by scalar bracketing inside the chart's trust window; this realizes
        // t_1 for every orbit through the d interval without the backward
        // magnification of polyline sampling slop
        auto sigma_minus_backtime = [&](const ChartPoint& y) -> std::optional<double> {
            const double target = stage - 1.0 / 3.0;
            auto level_gap = [&](const ChartPoint& p) -> std::optional<double> {
                ChartPoint q = p;
                if (q.chart != rec.location.chart) {
                    if (sys_.manifold.kind != ManifoldKind::Sphere) return std::nullopt;
                    if (q.vec().norm() < 1e-12) return std::nullopt;
                    q = sys_.manifold.to_chart(q, rec.location.chart);
                }
                Vec2 d = sys_.manifold.displacement(rec.location, q);
                if (d.norm() > 1.6 * rec.r_p) return std::nullopt;
                Vec2 x = rec.frame.apply(d) * scale;
                return stage - x.x * x.x + x.y * x.y - target;
            };
            std::optional<double> res;
            IntegrateOptions opt;
            opt.max_chord = 4 * h_;
            std::optional<double> gprev = level_gap(y);
            integrate_steps(sys_, y, -t_max_, opt,
                            [&](double t0, const ChartPoint&, double t1, const ChartPoint& p1) {
                                auto g1 = level_gap(p1);
                                if (!g1) {
                                    gprev.reset();
                                    return true;
                                }
                                if (gprev && (*gprev <= 0) != (*g1 <= 0)) {
                                    double u = *gprev / (*gprev - *g1);
                                    res = std::abs(t0) + u * (std::abs(t1) - std::abs(t0));
                                    return false;
                                }
                                gprev = g1;
                                return true;
                            });
            return res;
        };

        // per-node assignment
        std::atomic<int64_t> flagged(0), assigned(0);
        const char* dbg_env = std::getenv("ENERGYFORGE_DEBUG_NODE");
        int dbg_i = -1, dbg_j = -1, dbg_stage = -1;
        if (dbg_env) std::sscanf(dbg_env, "%d,%d,%d", &dbg_i, &dbg_j, &dbg_stage);
        for (int chart = 0; chart < (int)grid_.charts.size(); ++chart) {
            const GridChart& c = grid_.charts[chart];
            parallel_for(c.node_count(), [&](int64_t idx) {
                int i = (int)(idx % c.nx), j = (int)(idx / c.nx);
                if (!grid_.node_active(chart, i, j)) return;
                if (committed(chart, idx)) return;
                ChartPoint y = grid_.node_point(chart, i, j);
                bool dbg = (i == dbg_i && j == dbg_j && stage == dbg_stage);

                // local block V3 by chart membership
                bool have_eigen = true;
                Vec2 x;
                try {
                    x = rec.eigen_coords(sys_.manifold, y, scale);
                } catch (const std::exception&) {
                    have_eigen = false;
                }
                if (have_eigen) {
                    double phi = stage - x.x * x.x + x.y * x.y;
                    if (std::abs(x.x * x.y) <= q_limit * (1 + 1e-9) &&
                        phi >= stage - 1.0 / 3.0 - 1e-9 && phi <= Li + over) {
                        Vec2 d = rec.frame.inverse().apply(x) / scale;
                        if (d.norm() <= rec.r_p * 1.05) {
                            write_node(chart, idx, phi, RegionTag::V3, stage, phi > Li);
                            ++assigned;
                            return;
                        }
                    }
                }

                auto hit = targets.first_hit(sys_, y, true, t_max_, 4 * h_, probe);
                if (dbg) {
                    if (hit)
                        std::fprintf(stderr,
                                     "[dbg stage %d node (%d,%d)] hit kind=%d id=%d t=%.5f "
                                     "arclen=%.5f point=(%.5f,%.5f)\n",
                                     stage, i, j, hit->kind, hit->id, hit->time, hit->arclen,
                                     hit->point.x, hit->point.y);
                    else
                        std::fprintf(stderr, "[dbg stage %d node (%d,%d)] no hit\n", stage, i, j);
                }
                if (!hit) return;
                if (hit->kind == detail::CrossingField::kCommitted && !resolve(*hit)) return;
                if (hit->kind == detail::CrossingField::kDArc) {
                    if (!have_eigen) return;
                    double phi = stage - x.x * x.x + x.y * x.y;
                    if (phi >= stage - 1.0 / 3.0 - 0.05 && phi <= Li + over) {
                        write_node(chart, idx, phi, RegionTag::V3, stage, phi > Li);
                        ++assigned;
                    }
                    return;
                }
                // previous-stage boundary
                int bid = hit->id;
                const CompInfo& ci = comps[bid];
                const DGap* gap = ci.is_S ? find_d_gap(bid, hit->arclen) : nullptr;
                if (dbg) {
                    double ct1 = collar_T1(bid, hit->arclen);
                    auto back = sigma_minus_backtime(y);
                    std::fprintf(stderr,
                                 "[dbg] comp=%d is_S=%d in_gap=%d collar_T1=%.5f backtime=%s\n",
                                 bid, (int)ci.is_S, gap != nullptr, ct1,
                                 back ? std::to_string(*back).c_str() : "none");
                }
                if (gap) {
                    auto back = sigma_minus_backtime(y);
                    double T1;
                    if (back) {
                        T1 = hit->time + *back;
                    } else {
                        // orbit left the chart trust window before Sigma^-:
                        // interpolate t1 across the gap (exact at the ends)
                        const Polyline& poly = boundary_[bid];
                        double len = gap->a <= gap->b ? gap->b - gap->a
                                                      : poly.length() - gap->a + gap->b;
                        double da = hit->arclen >= gap->a ? hit->arclen - gap->a
                                                          : poly.length() - gap->a + hit->arclen;
                        double u = len > 0 ? std::clamp(da / len, 0.0, 1.0) : 0.0;
                        T1 = gap->t1a + u * (gap->t1b - gap->t1a);
                    }
                    if (hit->time <= T1) {
                        write_node(chart, idx, stage - (2.0 - hit->time / T1) / 3.0,
                                   RegionTag::V1, stage, false);
                        ++assigned;
                    } else {
                        double tpsi = hit->time - T1;
                        if (tpsi <= t2_ext * (1 + 1e-9)) {
                            double phi = psi_of(tpsi);
                            write_node(chart, idx, phi, RegionTag::V2, stage, phi > Li);
                            ++assigned;
                        }
                    }
                    return;
                }
                if (ci.is_S) {
                    double T1 = collar_T1(bid, hit->arclen);
                    if (hit->time <= T1) {
                        write_node(chart, idx, stage - (2.0 - hit->time / T1) / 3.0,
                                   RegionTag::V1, stage, false);
                        ++assigned;
                        return;
                    }
                    // beyond S_i^-: the orbit crossed S_i^- exactly T1 before the
                    // boundary, so the tube coordinate along psi is t - T1
                    double tpsi = hit->time - T1;
                    if (tpsi <= t2_ext * (1 + 1e-9)) {
                        double phi = psi_of(tpsi);
                        write_node(chart, idx, phi, RegionTag::V2, stage, phi > Li);
                        ++assigned;
                    }
                    return;
                }
                // untouched component: unit-time tube
                if (hit->time <= 1.0 + over + 1e-9) {
                    double phi = stage + hit->time - 2.0 / 3.0;
                    write_node(chart, idx, phi, RegionTag::V4, stage, phi > Li);
                    ++assigned;
                }
            });
        }
        info.flagged = (int)flagged.load();
        info.assigned = (int)assigned.load();
        if (flagged.load() > params_.flag_budget * std::max<int64_t>(1, assigned.load()))
            throw BuildError(stage, "flagged tube nodes exceed the 0.1% budget (" +
                                        std::to_string((long long)flagged.load()) + " of " +
                                        std::to_string((long long)assigned.load()) + ")");
        saddle_info_.push_back(info);
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "stage %d saddle: record=%d scale=%.6g t2=%.8g |c_i|=%d sigma_minus=%d "
                      "d_arcs=%d t1=[%.4g,%.4g] psi_spread=%.3g flagged=%d assigned=%d\n",
                      stage, record_id(stage), scale, t2, info.c_point_count,
                      info.sigma_minus_components, info.d_arc_count, info.t1_min, info.t1_max,
                      info.psi_spread, info.flagged, info.assigned);
        log_ << buf;
    }

    // ------------------------------------------------------------------
    // source stages
    // ------------------------------------------------------------------

    void stage_source(int stage, bool final_stage) {
        const FixedPointRecord& rec = record_at(stage);
        const double Li = level_of(stage), over = params_.overshoot;
        double rho_need = std::sqrt(1.0 / 3.0) * 1.1;
        double scale = 1.02 * rec.frame_norm * rho_need / rec.r_p;

        std::vector<ChartPoint> sigma_pts;
        Polyline sigma_poly;
        int halvings = 0;
        for (;; ++halvings) {
            if (halvings > params_.max_halvings)
                throw BuildError(stage, "Sigma_i cannot be made disjoint from U_{i-1}");
            sigma_pts.clear();
            if (sys_.manifold.dimension == 1) {
                double r = std::sqrt(1.0 / 3.0);
                sigma_pts.push_back(rec.from_eigen(sys_.manifold, {r, 0}, scale));
                sigma_pts.push_back(rec.from_eigen(sys_.manifold, {-r, 0}, scale));
            } else {
                std::vector<Vec2> eigen_pts;
                int n = params_.sigma_samples;
                for (int s = 0; s <= n; ++s) {
                    double a = 2 * kPi * s / n;
                    eigen_pts.push_back(
                        {std::sqrt(1.0 / 3.0) * std::cos(a), std::sqrt(1.0 / 3.0) * std::sin(a)});
                }
                sigma_poly = eigen_arc_to_manifold(rec, scale, eigen_pts);
                sigma_poly.closed = true;
                for (size_t s = 0; s < sigma_poly.pts.size(); s += 4) {
                    ChartPoint p(sigma_poly.chart, sigma_poly.pts[s].x, sigma_poly.pts[s].y);
                    sys_.manifold.normalize(p);
                    sigma_pts.push_back(p);
                }
            }
            bool conflict = false;
            for (const auto& p : sigma_pts)
                if (point_in_committed(p, level_of(stage - 1) + over) ||
                    dist_to_boundary(p) < 2 * h_)
                    conflict = true;
            if (!conflict) break;
            scale *= 2;
        }
        chart_scale_[record_id(stage)] = scale;

        if (sys_.manifold.dimension == 1) {
            stage_source_1d(stage, final_stage, rec, scale, sigma_pts);
            return;
        }

        detail::CrossingField boundary_targets(sys_.manifold);
        for (int bid = 0; bid < (int)boundary_.size(); ++bid)
            boundary_targets.add(boundary_[bid], detail::CrossingField::kBoundary, bid);
        boundary_targets.build(bin_cell());
        detail::CrossingField sigma_targets(sys_.manifold);
        sigma_targets.add(sigma_poly, detail::CrossingField::kSigma, 0);
        sigma_targets.build(bin_cell());

        auto probe = committed_probe(level_of(stage - 1));
        auto resolve = [&](detail::CrossingField::Hit& h) {
            if (h.kind != detail::CrossingField::kCommitted) return true;
            auto [comp, arc] = nearest_on_boundary(h.point, h.id);
            if (comp < 0) return false;
            h.kind = detail::CrossingField::kBoundary;
            h.id = comp;
            h.arclen = arc;
            return true;
        };
        // classify boundary components by the source orbits
        std::vector<char> is_S(boundary_.size(), 0);
        {
            std::atomic<int> misses(0);
            std::vector<int> comp_hit(sigma_pts.size(), -1);
            parallel_for((int64_t)sigma_pts.size(), [&](int64_t s) {
                auto hit = boundary_targets.first_hit(sys_, sigma_pts[s], true, t_max_, 4 * h_,
                                                      probe);
                if (hit && resolve(*hit)) comp_hit[s] = hit->id;
                else ++misses;
            });
            if (misses > 0)
                throw BuildError(stage, "forward orbit from Sigma_i misses the previous boundary (" +
                                            std::to_string(misses.load()) + " samples)");
            for (int cidx : comp_hit)
                if (cidx >= 0) is_S[cidx] = 1;
        }

        std::atomic<int64_t> flagged(0), assigned(0), sampling_misses(0);
        RegionTag tube_tag = final_stage ? RegionTag::Vk : RegionTag::V1;
        for (int chart = 0; chart < (int)grid_.charts.size(); ++chart) {
            const GridChart& c = grid_.charts[chart];
            parallel_for(c.node_count(), [&](int64_t idx) {
                int i = (int)(idx % c.nx), j = (int)(idx / c.nx);
                if (!grid_.node_active(chart, i, j)) return;
                if (committed(chart, idx)) return;
                ChartPoint y = grid_.node_point(chart, i, j);
                bool have_eigen = true;
                Vec2 x;
                try {
                    x = rec.eigen_coords(sys_.manifold, y, scale);
                } catch (const std::exception&) {
                    have_eigen = false;
                }
                if (have_eigen && x.norm2() <= 1.0 / 3.0 + 1e-12) {
                    Vec2 d = rec.frame.inverse().apply(x) / scale;
                    if (d.norm() <= rec.r_p * 1.05) {
                        write_node(chart, idx, stage - x.norm2(), RegionTag::Chart, stage, false);
                        ++assigned;
                        return;
                    }
                }
                auto back = sigma_targets.first_hit(sys_, y, false, t_max_, 4 * h_);
                auto fwd = boundary_targets.first_hit(sys_, y, true, t_max_, 4 * h_, probe);
                if (fwd && !resolve(*fwd)) fwd.reset();
                if (back && fwd) {
                    double t1 = back->time + fwd->time;
                    write_node(chart, idx, stage - (1.0 + back->time / t1) / 3.0, tube_tag, stage,
                               false);
                    // the node's own orbit witnesses that its component faces the
                    // source even when the Sigma sampling missed it
                    if (!is_S[fwd->id]) ++sampling_misses;
                    ++assigned;
                    return;
                }
                if (!final_stage && fwd && !is_S[fwd->id] && fwd->time <= 1.0 + over + 1e-9) {
                    double phi = stage + fwd->time - 2.0 / 3.0;
                    write_node(chart, idx, phi, RegionTag::V2, stage, phi > Li);
                    ++assigned;
                }
            });
        }
        if (flagged.load() > params_.flag_budget * std::max<int64_t>(1, assigned.load()))
            throw BuildError(stage, "flagged tube nodes exceed the budget");
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "stage %d source%s: record=%d scale=%.6g assigned=%lld flagged=%lld "
                      "component_sampling_misses=%lld\n",
                      stage, final_stage ? " (final)" : "", record_id(stage), scale,
                      (long long)assigned.load(), (long long)flagged.load(),
                      (long long)sampling_misses.load());
        log_ << buf;
    }

    void stage_source_1d(int stage, bool final_stage, const FixedPointRecord& rec, double scale,
                         const std::vector<ChartPoint>& sigma_pts) {
        const double Li = level_of(stage), over = params_.overshoot;
        std::vector<double> sigma_pos;
        for (const auto& p : sigma_pts) sigma_pos.push_back(p.x[0]);
        std::vector<double> boundary_pos;
        for (const auto& lp : boundary1d_) boundary_pos.push_back(lp.x);

        // classify boundary points by the source orbits
        std::vector<char> is_S(boundary_pos.size(), 0);
        for (const auto& p : sigma_pts) {
            auto hit = detail::first_passage_1d(sys_, p, boundary_pos, true, t_max_, 4 * h_);
            if (!hit)
                throw BuildError(stage, "forward orbit from Sigma_i misses the previous boundary");
            is_S[hit->id] = 1;
        }

        const GridChart& c = grid_.charts[0];
        RegionTag tube_tag = final_stage ? RegionTag::Vk : RegionTag::V1;
        std::atomic<int64_t> assigned(0);
        parallel_for(c.node_count(), [&](int64_t idx) {
            if (committed(0, idx)) return;
            ChartPoint y = grid_.node_point(0, (int)idx, 0);
            Vec2 x = rec.eigen_coords(sys_.manifold, y, scale);
            if (x.x * x.x <= 1.0 / 3.0 + 1e-12) {
                write_node(0, idx, stage - x.x * x.x, RegionTag::Chart, stage, false);
                ++assigned;
                return;
            }
            auto back = detail::first_passage_1d(sys_, y, sigma_pos, false, t_max_, 4 * h_);
            auto fwd = detail::first_passage_1d(sys_, y, boundary_pos, true, t_max_, 4 * h_);
            if (back && fwd) {
                double t1 = back->time + fwd->time;
                write_node(0, idx, stage - (1.0 + back->time / t1) / 3.0, tube_tag, stage, false);
                ++assigned;
                return;
            }
            if (!final_stage && fwd && !is_S[fwd->id] && fwd->time <= 1.0 + over + 1e-9) {
                double phi = stage + fwd->time - 2.0 / 3.0;
                write_node(0, idx, phi, RegionTag::V2, stage, phi > Li);
                ++assigned;
            }
        });
        char buf[160];
        std::snprintf(buf, sizeof buf, "stage %d source%s (1d): assigned=%lld\n", stage,
                      final_stage ? " final" : "", (long long)assigned.load());
        log_ << buf;
    }

    // ------------------------------------------------------------------
    // boundary extraction and finalization
    // ------------------------------------------------------------------

    double bin_cell() const {
        if (sys_.manifold.periodic()) return 1.0 / 64;
        return std::max(4 * h_, (sys_.manifold.kind == ManifoldKind::Sphere
                                     ? 2 * kSphereChartMax
                                     : 2 * sys_.manifold.radius) /
                                    64.0);
    }

    void extract_boundary(int stage) {
        boundary_.clear();
        boundary1d_.clear();
        double level = level_of(stage);
        if (sys_.manifold.dimension == 1) {
            boundary1d_ = level_points_1d(grid_, field_.phi, level);
            if (boundary1d_.empty())
                throw BuildError(stage, "no boundary points at level i+1/3");
            return;
        }
        std::vector<Polyline> all;
        for (int chart = 0; chart < (int)grid_.charts.size(); ++chart) {
            auto polys = marching_squares(grid_, field_.phi, chart, level);
            for (auto& p : polys) all.push_back(std::move(p));
        }
        // sphere: drop duplicate copies of contours that closed in both charts
        if (sys_.manifold.kind == ManifoldKind::Sphere) {
            auto max_r = [](const Polyline& p) {
                double r = 0;
                for (const auto& v : p.pts) r = std::max(r, v.norm());
                return r;
            };
            std::vector<char> drop(all.size(), 0);
            for (size_t a = 0; a < all.size(); ++a) {
                for (size_t b = a + 1; b < all.size(); ++b) {
                    if (drop[a] || drop[b] || all[a].chart == all[b].chart) continue;
                    // sample a few points of b into a's chart and compare
                    int matches = 0, tried = 0;
                    for (size_t s = 0; s < all[b].pts.size(); s += std::max<size_t>(1, all[b].pts.size() / 8)) {
                        Vec2 v = all[b].pts[s];
                        double r2 = v.norm2();
                        if (r2 < 1e-12) continue;
                        ++tried;
                        Vec2 m = v / r2;
                        double d = 1e9;
                        for (size_t t = 0; t + 1 < all[a].pts.size(); ++t)
                            d = std::min(d, std::sqrt(point_segment_dist2(m, all[a].pts[t],
                                                                          all[a].pts[t + 1])));
                        if (d < 4 * h_) ++matches;
                    }
                    if (tried > 0 && matches == tried)
                        drop[max_r(all[a]) <= max_r(all[b]) ? b : a] = 1;
                }
            }
            std::vector<Polyline> kept;
            for (size_t a = 0; a < all.size(); ++a) {
                if (drop[a]) continue;
                // open chains hugging the chart window rim are extraction
                // artifacts; the closed copy lives in the other chart
                if (!all[a].closed && max_r(all[a]) > kSphereChartMax - 3 * h_) continue;
                kept.push_back(std::move(all[a]));
            }
            all = std::move(kept);
        }
        // the level set pinches to sub-cell width along stable corridors of
        // earlier saddles; stitch the resulting open chains across the pinch,
        // escalating the tolerance while gaps remain (corridor gaps shrink
        // only logarithmically with h)
        double domain_span = sys_.manifold.kind == ManifoldKind::Sphere
                                 ? 2 * kSphereChartMax
                                 : (sys_.manifold.kind == ManifoldKind::PlaneDisk
                                        ? 2 * sys_.manifold.radius
                                        : 1.0);
        for (double tol = 6 * h_; tol <= 0.25 * domain_span; tol *= 2) {
            stitch_open_chains(all, sys_.manifold.periodic(), tol);
            bool any_open = false;
            for (const auto& p : all) any_open |= !p.closed;
            if (!any_open) break;
        }
        std::vector<Polyline> kept;
        int dropped_open = 0, dropped_tiny = 0;
        for (auto& p : all) {
            if (!p.closed) {
                ++dropped_open;
                continue;
            }
            if (p.length() < 8 * h_) {
                ++dropped_tiny;
                continue;
            }
            kept.push_back(std::move(p));
        }
        if (dropped_open + dropped_tiny > 0) {
            char buf[128];
            std::snprintf(buf, sizeof buf,
                          "stage %d: dropped %d open and %d tiny boundary chains after stitching\n",
                          stage, dropped_open, dropped_tiny);
            log_ << buf;
        }
        if (kept.empty()) throw BuildError(stage, "no boundary contour at level i+1/3");
        boundary_ = std::move(kept);
    }

    void finalize_coverage(int k) {
        int64_t missing = 0, stale = 0;
        std::string where;
        for (int chart = 0; chart < (int)grid_.charts.size(); ++chart) {
            const GridChart& c = grid_.charts[chart];
            for (int64_t idx = 0; idx < c.node_count(); ++idx) {
                int i = (int)(idx % c.nx), j = (int)(idx / c.nx);
                if (!grid_.node_active(chart, i, j)) continue;
                bool bad = false;
                if (std::isnan(field_.phi.values[chart][idx])) {
                    ++missing;
                    bad = true;
                } else if (provisional_[chart][idx]) {
                    ++stale;
                    bad = true;
                }
                if (bad && where.size() < 300) {
                    char buf[80];
                    Vec2 p = c.position(i, j);
                    std::snprintf(buf, sizeof buf, " (%d:%.5f,%.5f)", chart, p.x, p.y);
                    where += buf;
                }
            }
        }
        if (missing > 0 || stale > 0)
            throw BuildError(k, "coverage failure: " + std::to_string(missing) +
                                    " undefined and " + std::to_string(stale) +
                                    " stale overshoot nodes remain at" + where);
    }
};

}  // namespace energyforge

#endif
