#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gridwarm/error.hpp"
#include "gridwarm/grid_io.hpp"
#include "test_support.hpp"

#include <random>
#include <sstream>

using namespace gridwarm;
using gridwarm::testing::fixture_path;
using gridwarm::testing::load_fixture_case;

namespace {

// Naive reader for the bus table, used as an independent check of the parser.
std::vector<std::vector<double>> raw_bus_rows(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    bool inside = false;
    while (std::getline(in, line)) {
        if (line.rfind("mpc.bus = [", 0) == 0) {
            inside = true;
            continue;
        }
        if (inside && line.rfind("];", 0) == 0)
            break;
        if (inside) {
            for (auto& c : line)
                if (c == ';')
                    c = ' ';
            std::istringstream ls(line);
            std::vector<double> row;
            double v;
            while (ls >> v)
                row.push_back(v);
            rows.push_back(row);
        }
    }
    return rows;
}

const char* minimal_case = R"(function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.02 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1.02 100 1 200 0;
];
mpc.branch = [
];
)";

} // namespace

TEST_CASE("parse_matpower reads the IEEE reference cases") {
    for (const char* name : {"case14", "case118"}) {
        CAPTURE(name);
        const auto grid = load_fixture_case(name);
        const auto ref = gridwarm::testing::load_reference(name);
        CHECK(grid.buses.size() == ref["n_bus"].get<std::size_t>());
        CHECK(grid.generators.size() == ref["n_gen"].get<std::size_t>());
        CHECK(grid.branches.size() == ref["n_branch"].get<std::size_t>());
        CHECK(validate(grid).empty());
    }
    CHECK(load_fixture_case("case118").buses.size() == 118);
}

TEST_CASE("parse_matpower converts loads and shunts to per-unit") {
    for (const char* name : {"case14", "case118"}) {
        const auto text = read_text_file(fixture_path(std::string(name) + ".m"));
        const auto grid = parse_matpower(text);
        const auto rows = raw_bus_rows(text);
        REQUIRE(rows.size() == grid.buses.size());
        std::size_t load_idx = 0;
        for (const auto& row : rows) {
            const auto& bus = grid.buses[grid.bus_index(static_cast<int>(row[0])).value()];
            CHECK(bus.shunt_b * grid.base_mva == doctest::Approx(row[5]).epsilon(1e-12));
            if (row[2] == 0 && row[3] == 0)
                continue;
            const auto& load = grid.loads.at(load_idx++);
            CHECK(load.bus == static_cast<int>(row[0]));
            CHECK(std::abs(load.p * grid.base_mva - row[2]) <= 1e-12 * std::max(1.0, std::abs(row[2])));
            CHECK(std::abs(load.q * grid.base_mva - row[3]) <= 1e-12 * std::max(1.0, std::abs(row[3])));
        }
        CHECK(load_idx == grid.loads.size());
    }
}

TEST_CASE("parse_matpower maps generator and branch fields") {
    const auto grid = load_fixture_case("case14");
    const auto& g0 = grid.generators[0];
    CHECK(g0.bus == 1);
    CHECK(g0.p_set == doctest::Approx(2.324));
    CHECK(g0.p_max == doctest::Approx(3.324));
    CHECK(g0.participation == doctest::Approx(3.324));
    CHECK(g0.v_set == doctest::Approx(1.06));
    CHECK(grid.buses[0].kind == BusKind::slack);
    CHECK(grid.buses[1].kind == BusKind::pv);
    int taps = 0;
    for (const auto& br : grid.branches)
        if (br.tap_ratio != 1.0)
            ++taps;
    CHECK(taps == 3);
}

TEST_CASE("minimal case with only a slack bus is valid") {
    std::vector<std::string> warnings;
    const auto grid = parse_matpower(minimal_case, &warnings);
    CHECK(grid.buses.size() == 1);
    CHECK(grid.branches.empty());
    CHECK(grid.loads.empty());
    CHECK(validate(grid).empty());
}

TEST_CASE("extra tables are ignored with a warning") {
    std::vector<std::string> warnings;
    parse_matpower(read_text_file(fixture_path("case14.m")), &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("gencost") != std::string::npos);
}

TEST_CASE("parse_matpower errors") {
    SUBCASE("malformed row reports its line") {
        std::string bad = minimal_case;
        bad.replace(bad.find("1.02 0 230"), 4, "abc!");
        try {
            parse_matpower(bad);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 4);
        }
    }
    SUBCASE("short row") {
        std::string bad = minimal_case;
        bad.replace(bad.find("1 0 0 100"), 9, "1 0");
        CHECK_THROWS_AS(parse_matpower(bad), ParseError);
    }
    SUBCASE("duplicate bus id") {
        std::string bad = minimal_case;
        bad.insert(bad.find("];"), "  1 1 0 0 0 0 1 1 0 230 1 1.1 0.9;\n");
        CHECK_THROWS_AS(parse_matpower(bad), ValidationError);
    }
    SUBCASE("no slack bus") {
        std::string bad = minimal_case;
        bad.replace(bad.find("1 3 0"), 5, "1 2 0");
        CHECK_THROWS_AS(parse_matpower(bad), ValidationError);
    }
    SUBCASE("isolated bus type") {
        std::string bad = minimal_case;
        bad.insert(bad.find("];"), "  2 4 0 0 0 0 1 1 0 230 1 1.1 0.9;\n");
        CHECK_THROWS_AS(parse_matpower(bad), ParseError);
    }
    SUBCASE("missing baseMVA") {
        std::string bad = minimal_case;
        bad.erase(bad.find("mpc.baseMVA"), 18);
        CHECK_THROWS_AS(parse_matpower(bad), ParseError);
    }
}

TEST_CASE("native format round-trips") {
    auto grid = load_fixture_case("case14");
    grid.branches[3].in_service = false;
    const auto text = serialize_native(grid);
    CHECK(serialize_native(grid) == text);
    const auto back = parse_native(text);
    CHECK(back == grid);
    CHECK_FALSE(back.branches[3].in_service);
    CHECK(serialize_native(back) == text);

    const auto big = serialize_native(load_fixture_case("case118"));
    CHECK(nlohmann::json::parse(big)["buses"].size() == 118);
}

TEST_CASE("native round-trip holds for arbitrary field values") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int trial = 0; trial < 20; ++trial) {
        auto grid = load_fixture_case("case14");
        for (auto& b : grid.buses) {
            b.v_ang_init = u(rng);
            b.shunt_b = u(rng) * 1e-7;
        }
        for (auto& br : grid.branches) {
            br.r = u(rng);
            br.phase_shift = u(rng) / 3.0;
            br.in_service = rng() % 2;
        }
        for (auto& l : grid.loads)
            l.q = u(rng) * 1.234567e-11;
        CHECK(parse_native(serialize_native(grid)) == grid);
    }
}

TEST_CASE("native schema errors name the offending path") {
    CHECK_THROWS_AS(parse_native(""), SchemaError);
    CHECK_THROWS_AS(parse_native("   \n"), SchemaError);
    CHECK_THROWS_AS(parse_native("{not json"), SchemaError);
    auto doc = nlohmann::json::parse(serialize_native(load_fixture_case("case14")));
    doc["branches"][2].erase("x");
    try {
        parse_native(doc.dump());
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()) == "$.branches[2].x: missing");
    }
    doc = nlohmann::json::parse(serialize_native(load_fixture_case("case14")));
    doc["buses"][0]["kind"] = "swing";
    CHECK_THROWS_WITH_AS(parse_native(doc.dump()), doctest::Contains("$.buses[0].kind"), SchemaError);
}

TEST_CASE("validate") {
    const auto base = load_fixture_case("case14");
    CHECK(validate(base).empty());

    SUBCASE("branch to a nonexistent bus") {
        auto g = base;
        g.branches[5].to_bus = 999;
        const auto d = validate(g);
        REQUIRE(d.size() == 1);
        CHECK(d[0].code == "branch_endpoint");
        CHECK(d[0].message.find("branch 5") != std::string::npos);
    }
    SUBCASE("slack isolated by out-of-service branches") {
        auto g = base;
        for (auto& br : g.branches)
            if (br.from_bus == 1 || br.to_bus == 1)
                br.in_service = false;
        const auto d = validate(g);
        REQUIRE(d.size() == 1);
        CHECK(d[0].code == "connectivity");
    }
}

TEST_CASE("validate flags every single-invariant violation") {
    const auto base = load_fixture_case("case118");
    using Mutation = void (*)(GridCase&, std::size_t);
    const std::vector<Mutation> mutations = {
        [](GridCase& g, std::size_t) { g.base_mva = 0; },
        [](GridCase& g, std::size_t k) { g.buses[k % g.buses.size()].v_mag_init = -0.1; },
        [](GridCase& g, std::size_t k) { g.buses[1 + k % (g.buses.size() - 1)].id = g.buses[0].id; },
        [](GridCase& g, std::size_t) { g.buses[g.slack_index()].kind = BusKind::pq; },
        [](GridCase& g, std::size_t k) {
            auto s = g.slack_index();
            g.buses[(s + 1 + k) % g.buses.size()].kind = BusKind::slack;
        },
        [](GridCase& g, std::size_t k) { g.branches[k % g.branches.size()].from_bus = -7; },
        [](GridCase& g, std::size_t k) {
            auto& br = g.branches[k % g.branches.size()];
            br.r = br.x = 0;
        },
        [](GridCase& g, std::size_t k) { g.branches[k % g.branches.size()].tap_ratio = 0; },
        [](GridCase& g, std::size_t k) {
            auto& gen = g.generators[k % g.generators.size()];
            gen.p_set = gen.p_max + 1;
        },
        [](GridCase& g, std::size_t k) { g.loads[k % g.loads.size()].bus = 100000; },
    };
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        auto g = base;
        const auto m = rng() % mutations.size();
        mutations[m](g, static_cast<std::size_t>(rng() % 1000));
        CAPTURE(m);
        CHECK_FALSE(validate(g).empty());
    }
}

TEST_CASE("bridge detection") {
    auto g = gridwarm::testing::two_bus(0.0, 0.1, 0.5, 0.0);
    CHECK(bridge_branches(g) == std::vector<bool>{true});
    g.branches.push_back(g.branches[0]);
    CHECK(bridge_branches(g) == std::vector<bool>{false, false});

    const auto c14 = load_fixture_case("case14");
    const auto bridges = bridge_branches(c14);
    for (std::size_t k = 0; k < c14.branches.size(); ++k) {
        auto cut = c14;
        cut.branches[k].in_service = false;
        const auto seen = reachable_from(cut, cut.slack_index());
        const bool connected = std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
        CHECK(bridges[k] == !connected);
    }
}
