#pragma once

#include "gridwarm/grid_io.hpp"

#include <string>

namespace gridwarm::testing {

inline std::string fixture_path(const std::string& name) { return std::string(GRIDWARM_FIXTURES) + "/" + name; }

inline GridCase load_fixture_case(const std::string& name) { return parse_matpower(read_text_file(fixture_path(name + ".m"))); }

inline nlohmann::json load_reference(const std::string& name) {
    return nlohmann::json::parse(read_text_file(fixture_path(name + "_reference.json")));
}

// Two buses joined by one line; bus 1 slack, bus 2 PQ.
inline GridCase two_bus(double r, double x, double p_load, double q_load) {
    GridCase g;
    g.base_mva = 100;
    g.buses = {{1, BusKind::slack, 1.0, 0.0, 0.0, 0.0}, {2, BusKind::pq, 1.0, 0.0, 0.0, 0.0}};
    Branch br;
    br.from_bus = 1;
    br.to_bus = 2;
    br.r = r;
    br.x = x;
    g.branches = {br};
    Generator gen;
    gen.bus = 1;
    gen.p_set = p_load;
    gen.p_max = 10.0;
    gen.participation = 10.0;
    g.generators = {gen};
    if (p_load != 0.0 || q_load != 0.0)
        g.loads = {{2, p_load, q_load, true}};
    return g;
}

// Meshed 4-bus ring 1-2-3-4-1 plus chord 1-3. Slack generator at bus 1,
// PV generator at bus 2; loads 0.3 at bus 2, 0.9 at bus 3, 0.5 at bus 4.
inline GridCase ring4() {
    GridCase g;
    g.base_mva = 100;
    g.buses = {{1, BusKind::slack, 1.0, 0.0, 0.0, 0.0},
               {2, BusKind::pv, 1.0, 0.0, 0.0, 0.0},
               {3, BusKind::pq, 1.0, 0.0, 0.0, 0.0},
               {4, BusKind::pq, 1.0, 0.0, 0.0, 0.0}};
    auto line = [](int f, int t, double r, double x, double b) {
        Branch br;
        br.from_bus = f;
        br.to_bus = t;
        br.r = r;
        br.x = x;
        br.b_charging = b;
        return br;
    };
    g.branches = {line(1, 2, 0.01, 0.1, 0.02), line(2, 3, 0.02, 0.12, 0.0), line(3, 4, 0.01, 0.08, 0.01),
                  line(4, 1, 0.015, 0.1, 0.0), line(1, 3, 0.02, 0.15, 0.0)};
    Generator g1;
    g1.bus = 1;
    g1.p_set = 1.0;
    g1.v_set = 1.02;
    g1.p_max = 5.0;
    g1.participation = 1.0;
    Generator g2 = g1;
    g2.bus = 2;
    g2.p_set = 0.7;
    g2.v_set = 1.01;
    g2.participation = 3.0;
    g.generators = {g1, g2};
    g.loads = {{2, 0.3, 0.1, true}, {3, 0.9, 0.3, true}, {4, 0.5, 0.2, true}};
    return g;
}

} // namespace gridwarm::testing
