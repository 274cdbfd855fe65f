#ifndef ENERGYFORGE_FLOWSPEC_HPP
#define ENERGYFORGE_FLOWSPEC_HPP

// Flow spec files: structured key-value text describing a manifold and a
// vector field, e.g.
//
//   manifold.kind = torus
//   field.catalog = torus_height_gradient
//   integrator.tol = 1e-9
//
// or with explicit per-chart expressions:
//
//   manifold.kind = sphere
//   field.expressions.0 = x, y
//   field.expressions.1 = -x, -y

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "energyforge/flow_system.hpp"

namespace energyforge {

struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::map<std::string, std::string> parse_keyvalues(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw SpecError("flow spec line " + std::to_string(lineno) + ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

}  // namespace detail

// Built-in catalog flows, stored as spec text so that the catalog and user
// files share one load path.
inline const std::map<std::string, std::string>& flow_catalog() {
    static const std::map<std::string, std::string> catalog = {
        {"circle_two_points",
         "manifold.kind = circle\n"
         "manifold.dimension = 1\n"
         "field.expressions.0 = -sin(2*pi*x)\n"},
        {"sphere_north_south",
         "manifold.kind = sphere\n"
         "field.expressions.0 = x, y\n"
         "field.expressions.1 = -x, -y\n"},
        {"torus_height_gradient",
         "manifold.kind = torus\n"
         "field.expressions.0 = sin(2*pi*x), sin(2*pi*y)\n"},
        {"planar_saddle",
         "manifold.kind = plane-disk\n"
         "manifold.radius = 4\n"
         "field.test_only = true\n"
         "field.expressions.0 = 0.6931471805599453*x, -0.6931471805599453*y\n"},
        {"planar_center",
         "manifold.kind = plane-disk\n"
         "manifold.radius = 2\n"
         "field.test_only = true\n"
         "field.expressions.0 = -y, x\n"},
    };
    return catalog;
}

inline FlowSystem flow_from_spec_text(const std::string& text) {
    auto kv = detail::parse_keyvalues(text);

    // catalog entries provide defaults; explicit keys win
    auto cat = kv.find("field.catalog");
    if (cat != kv.end()) {
        auto it = flow_catalog().find(cat->second);
        if (it == flow_catalog().end())
            throw SpecError("unknown catalog flow '" + cat->second + "'");
        auto base = detail::parse_keyvalues(it->second);
        for (auto& [k, v] : kv)
            if (k != "field.catalog") base[k] = v;
        base["field.catalog"] = cat->second;
        kv = std::move(base);
    }

    FlowSystem sys;
    auto get = [&](const std::string& key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    auto get_double = [&](const std::string& key, double dflt) {
        const std::string* s = get(key);
        if (!s) return dflt;
        try {
            return std::stod(*s);
        } catch (const std::exception&) {
            throw SpecError("flow spec: bad numeric value for " + key);
        }
    };

    const std::string* kind = get("manifold.kind");
    if (!kind) throw SpecError("flow spec: manifold.kind is required");
    sys.manifold.kind = kind_from_name(*kind);
    sys.manifold.dimension = sys.manifold.kind == ManifoldKind::Circle ? 1 : 2;
    sys.manifold.dimension = (int)get_double("manifold.dimension", sys.manifold.dimension);
    sys.manifold.radius = get_double("manifold.radius", 1.0);
    sys.tol = get_double("integrator.tol", 1e-9);
    sys.max_step = get_double("integrator.max_step", 0.05);
    sys.builder_t_max = get_double("builder.t_max", 200.0);
    if (const std::string* t = get("field.test_only"))
        sys.test_only = (*t == "true" || *t == "1" || *t == "yes");
    if (const std::string* c = get("field.catalog")) sys.field.catalog_name = *c;

    for (auto& [k, v] : kv) {
        const std::string prefix = "field.param.";
        if (k.rfind(prefix, 0) == 0) sys.field.parameters[k.substr(prefix.size())] = std::stod(v);
    }

    auto coord_names = sys.manifold.coord_names();
    for (int chart = 0; chart < sys.manifold.chart_count(); ++chart) {
        const std::string* expr = get("field.expressions." + std::to_string(chart));
        if (!expr && chart == 0) expr = get("field.expressions");
        if (!expr)
            throw SpecError("flow spec: missing field.expressions." + std::to_string(chart));
        auto comps = split_components(*expr);
        if ((int)comps.size() != sys.manifold.dimension)
            throw SpecError("flow spec: chart " + std::to_string(chart) + " needs " +
                            std::to_string(sys.manifold.dimension) + " components");
        std::vector<std::string> trimmed;
        for (auto& c : comps) trimmed.push_back(detail::trim(c));
        sys.field.sources.push_back(trimmed);
        sys.field.components.push_back(parse_field(trimmed, coord_names, sys.field.parameters));
    }

    sys.source_text = text;
    validate_system(sys);
    return sys;
}

inline FlowSystem load_flow_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open flow spec file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return flow_from_spec_text(ss.str());
}

inline FlowSystem catalog_flow(const std::string& name) {
    auto it = flow_catalog().find(name);
    if (it == flow_catalog().end()) throw SpecError("unknown catalog flow '" + name + "'");
    FlowSystem sys = flow_from_spec_text(it->second);
    sys.field.catalog_name = name;
    return sys;
}

// FNV-1a content hash, recorded in build artifacts for reproducibility.
inline uint64_t fnv1a_hash(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace energyforge

#endif
