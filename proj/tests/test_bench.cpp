#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gridwarm/bench.hpp"
#include "gridwarm/error.hpp"
#include "test_support.hpp"

#include <filesystem>
#include <regex>

using namespace gridwarm;
using namespace gridwarm::testing;

namespace {

const Dataset& small_dataset() {
    static const Dataset ds = [] {
        GenSpec spec;
        spec.n_samples = 6;
        spec.seed = 21;
        return generate_dataset(load_fixture_case("case14"), spec, 1);
    }();
    return ds;
}

BenchRow row(int id, const std::string& method, int it, bool conv = true) {
    BenchRow r;
    r.sample_id = id;
    r.init_method = method;
    r.iterations = it;
    r.converged = conv;
    return r;
}

int count(const std::string& s, const std::string& needle) {
    int n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1))
        ++n;
    return n;
}

} // namespace

TEST_CASE("run_bench") {
    const auto& samples = small_dataset().samples;
    ModelConfig mc;
    mc.sharing = Sharing::shared;
    std::vector<BenchModel> models{{"cgrf-ps", init_model(mc, 3)}};
    mc.zi_enforce = true;
    models.push_back({"cgrf-ps-zi", init_model(mc, 4)});
    BenchOptions opts;
    opts.include_label = true;
    const auto rows = run_bench(samples, models, opts);

    SUBCASE("one row per sample and method in fixed order") {
        REQUIRE(rows.size() == samples.size() * 5);
        const std::vector<std::string> order{"flat", "vpre", "cgrf-ps", "cgrf-ps-zi", "label"};
        for (std::size_t j = 0; j < samples.size(); ++j)
            for (std::size_t k = 0; k < order.size(); ++k) {
                CHECK(rows[5 * j + k].sample_id == samples[j].id);
                CHECK(rows[5 * j + k].init_method == order[k]);
            }
    }

    SUBCASE("baselines use the stored states and identical options") {
        for (std::size_t j = 0; j < samples.size(); ++j) {
            const auto flat = solve_nr(samples[j].post_case, flat_start(samples[j].post_case), opts.solve);
            const auto vpre = solve_nr(samples[j].post_case, samples[j].pre_solution, opts.solve);
            CHECK(rows[5 * j].iterations == flat.report.iterations);
            CHECK(rows[5 * j].max_mismatch == flat.report.max_mismatch);
            CHECK(rows[5 * j + 1].iterations == vpre.report.iterations);
            CHECK(rows[5 * j + 1].converged == vpre.report.converged);
        }
    }

    SUBCASE("label start is a fixed point") {
        for (const auto& r : rows)
            if (r.init_method == "label") {
                CHECK(r.converged);
                CHECK(r.iterations <= 1);
            }
    }

    SUBCASE("prediction mse only on model rows") {
        for (const auto& r : rows) {
            CHECK(r.prediction_mse.has_value() == (r.init_method.rfind("cgrf", 0) == 0));
            if (r.prediction_mse)
                CHECK(*r.prediction_mse >= 0.0);
        }
        const auto mu = predict(models[0].model, samples[0]);
        double sum = 0;
        for (std::size_t i = 0; i < mu.size(); ++i)
            sum += std::norm(mu.at(i) - samples[0].label.at(i));
        CHECK(*rows[2].prediction_mse == doctest::Approx(sum / (2.0 * mu.size())).epsilon(1e-12));
    }

    SUBCASE("wall time is zero unless timing is on") {
        for (const auto& r : rows)
            CHECK(r.wall_time == 0.0);
        BenchOptions t = opts;
        t.timing = true;
        const auto timed = run_bench({samples[0]}, {}, t);
        CHECK(timed[0].wall_time > 0.0);
    }

    SUBCASE("jobs do not change the rows") {
        BenchOptions par = opts;
        par.jobs = 3;
        CHECK(bench_csv(run_bench(samples, models, par)) == bench_csv(rows));
    }

    SUBCASE("shared model on a bigger grid, per-element mismatch rejected") {
        GenSpec spec;
        spec.n_samples = 1;
        spec.seed = 2;
        const auto big = generate_dataset(load_fixture_case("case118"), spec, 1);
        CHECK(run_bench(big.samples, {models[0]}).size() == 3);
        ModelConfig pe;
        pe.sharing = Sharing::per_element;
        pe.bus_count = 14;
        pe.branch_count = 20;
        CHECK_THROWS_AS(run_bench(big.samples, {{"cgrf", init_model(pe, 1)}}), Error);
    }

    SUBCASE("reserved or repeated names") {
        CHECK_THROWS_AS(run_bench(samples, {{"flat", models[0].model}}), Error);
        CHECK_THROWS_AS(run_bench(samples, {models[0], models[0]}), Error);
    }
}

TEST_CASE("summarize") {
    SUBCASE("identical iterations give speedup 1") {
        std::vector<BenchRow> rows;
        for (int id = 0; id < 4; ++id)
            for (const char* m : {"flat", "vpre", "cgrf"})
                rows.push_back(row(id, m, 5));
        const auto s = summarize(rows);
        CHECK(s.sample_count == 4);
        CHECK(s.comparison("cgrf", "flat").speedup == 1.0);
        CHECK(s.comparison("cgrf", "vpre").speedup == 1.0);
        CHECK(s.comparison("cgrf", "flat").win_rate == 0.0);
        CHECK(s.stats("flat").std == 0.0);
    }

    SUBCASE("single sample arithmetic") {
        const auto s = summarize({row(0, "flat", 10), row(0, "cgrf", 2)});
        CHECK(s.comparison("cgrf", "flat").speedup == 5.0);
        CHECK(s.comparison("cgrf", "flat").win_rate == 1.0);
    }

    SUBCASE("ratios over mutually converged samples only") {
        std::vector<BenchRow> rows{row(0, "flat", 6),  row(0, "cgrf", 3),         row(1, "flat", 8),
                                   row(1, "cgrf", 4),  row(2, "flat", 100, false), row(2, "cgrf", 2),
                                   row(3, "flat", 5), row(3, "cgrf", 100, false)};
        const auto s = summarize(rows);
        const auto& c = s.comparison("cgrf", "flat");
        CHECK(c.mutual == 2);
        CHECK(c.method_only == 1);
        CHECK(c.baseline_only == 1);
        CHECK(c.median_baseline == 7.0);
        CHECK(c.median_method == 3.5);
        CHECK(c.speedup == 2.0);
        CHECK(s.stats("flat").converged == 3);
        CHECK(s.stats("flat").convergence_rate == 0.75);
        CHECK(s.stats("flat").median == 6.0);
        CHECK(s.stats("cgrf").mean == doctest::Approx(3.0));
        CHECK(s.stats("cgrf").std == doctest::Approx(std::sqrt(2.0 / 3.0)));
        const auto j = to_json(s);
        CHECK(j["methods"][0]["non_converged"] == 1);
        CHECK(j["comparisons"][0]["speedup"] == 2.0);
    }

    SUBCASE("no mutual samples") {
        const auto s = summarize({row(0, "flat", 6, false), row(0, "cgrf", 3)});
        CHECK(s.comparison("cgrf", "flat").mutual == 0);
        CHECK(to_json(s)["comparisons"][0]["speedup"].is_null());
        CHECK_THROWS_AS(s.stats("label"), Error);
    }

    SUBCASE("median") {
        CHECK(median({3, 1, 2}) == 2.0);
        CHECK(median({4, 1, 3, 2}) == 2.5);
        CHECK(std::isnan(median({})));
    }

    SUBCASE("exact label start is never worse than a model start") {
        const auto& samples = small_dataset().samples;
        ModelConfig mc;
        BenchOptions o;
        o.include_label = true;
        const auto s = summarize(run_bench(samples, {{"cgrf-ps", init_model(mc, 8)}}, o));
        CHECK(s.stats("label").median <= s.stats("cgrf-ps").median);
    }
}

TEST_CASE("bench outputs") {
    const auto dir = std::filesystem::temp_directory_path() / "gridwarm_test_bench";
    std::filesystem::create_directories(dir);

    SUBCASE("header-only csv for zero rows") {
        CHECK(bench_csv({}) == std::string(kBenchCsvHeader) + "\n");
        CHECK(std::string(kBenchCsvHeader) ==
              "sample_id,init_method,iterations,converged,max_mismatch,prediction_mse,wall_time");
    }

    SUBCASE("rows have seven fields and rewrite byte-identically") {
        auto r = row(3, "cgrf", 4);
        r.prediction_mse = 1.5e-4;
        r.max_mismatch = 2e-9;
        const std::vector<BenchRow> rows{row(3, "flat", 5), r};
        const auto path = (dir / "bench.csv").string();
        emit_csv(rows, path);
        const auto first = read_text_file(path);
        emit_csv(rows, path);
        CHECK(read_text_file(path) == first);
        const std::regex line_re("^[0-9]+,[a-z-]+,[0-9]+,(true|false),[^,]+,[^,]*,[^,]+$");
        std::istringstream in(first);
        std::string line;
        std::getline(in, line);
        int n = 0;
        while (std::getline(in, line)) {
            CHECK(std::regex_match(line, line_re));
            ++n;
        }
        CHECK(n == 2);
        CHECK(first.find("3,flat,5,true,0.000000000e+00,,0.000000") != std::string::npos);
        CHECK(first.find("3,cgrf,4,true,2.000000000e-09,1.500000000e-04,") != std::string::npos);
    }

    SUBCASE("report merges the extra members") {
        const auto path = (dir / "report.json").string();
        nlohmann::ordered_json extra = {{"code_version", "x"}, {"config", {{"seed", 1}}}};
        emit_report(summarize({row(0, "flat", 6), row(0, "cgrf", 3)}), path, extra);
        const auto doc = nlohmann::json::parse(read_text_file(path));
        CHECK(doc["code_version"] == "x");
        CHECK(doc["config"]["seed"] == 1);
        CHECK(doc["comparisons"][0]["speedup"] == 2.0);
    }

    SUBCASE("svg has one box group per method") {
        const std::vector<BenchRow> rows{row(0, "flat", 6), row(0, "vpre", 4),  row(0, "cgrf", 3),
                                         row(1, "flat", 7), row(1, "vpre", 4), row(1, "cgrf", 2, false)};
        const auto svg = bench_svg(rows);
        CHECK(count(svg, "<g class=\"box\"") == 3);
        CHECK(count(svg, "</g>") == 3);
        CHECK(count(svg, "<rect") == 3);
        for (const char* m : {"flat", "vpre", "cgrf"})
            CHECK(svg.find(std::string("data-method=\"") + m + "\"") != std::string::npos);
        CHECK(svg.rfind("<svg", 0) == 0);
        CHECK(bench_svg(rows) == svg);
    }

    SUBCASE("unwritable path names the path") {
        const auto bad = (dir / "missing" / "x.csv").string();
        try {
            emit_csv({}, bad);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find(bad) != std::string::npos);
        }
    }
    std::filesystem::remove_all(dir);
}
