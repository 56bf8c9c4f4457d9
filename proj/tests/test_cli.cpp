#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gridwarm/grid_io.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

using namespace gridwarm;
using namespace gridwarm::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "gridwarm_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string in_work(const std::string& name) { return (work_dir() / name).string(); }

// Runs the CLI with `args`; stdout goes to `stdout_file` when given.
int cli(const std::string& args, const std::string& stdout_file = "") {
    std::string cmd = "cd '" + work_dir().string() + "' && '" + std::string(GRIDWARM_CLI) + "' " + args;
    cmd += stdout_file.empty() ? " >/dev/null" : " >'" + in_work(stdout_file) + "'";
    cmd += " 2>>'" + in_work("stderr.log") + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const std::string& path) { return json::parse(read_text_file(in_work(path))); }

bool same_tree(const std::string& a, const std::string& b) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(in_work(a)))
        names.push_back(e.path().filename().string());
    std::size_t other = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(in_work(b)))
        ++other;
    if (names.empty() || names.size() != other)
        return false;
    for (const auto& n : names)
        if (read_text_file(in_work(a + "/" + n)) != read_text_file(in_work(b + "/" + n)))
            return false;
    return true;
}

const std::string case14 = "'" + fixture_path("case14.m") + "'";
const std::string case118 = "'" + fixture_path("case118.m") + "'";

// A small 14-bus dataset shared by the later cases.
void ensure_dataset() {
    static const bool done = [] {
        REQUIRE(cli("gen --case " + case14 + " --n-samples 20 --seed 5 --out d14 -q") == 0);
        return true;
    }();
    (void)done;
}

} // namespace

TEST_CASE("usage") {
    CHECK(cli("") == 1);
    CHECK(cli("--help") == 0);
    CHECK(cli("train --help") == 0);
    CHECK(cli("--version", "version.txt") == 0);
    CHECK(read_text_file(in_work("version.txt")).find(GRIDWARM_VERSION) != std::string::npos);
    CHECK(cli("frobnicate") == 1);
    CHECK(cli("gen --case " + case14) == 1);  // --out is required
    CHECK(cli("pf --case missing.m") == 1);
    CHECK(cli("pf --case " + case14 + " --jobs 0") == 1);
}

TEST_CASE("pf") {
    SUBCASE("flat start on the 14-bus case converges") {
        CHECK(cli("pf --case " + case14 + " --out pf1", "pf1.json") == 0);
        const auto r = read_json("pf1.json");
        CHECK(r["converged"] == true);
        CHECK(r["iterations"].get<int>() >= 1);
        CHECK(r["max_mismatch"].get<double>() <= 1e-6);
        const auto doc = read_json("pf1/pf_report.json");
        CHECK(doc["format"] == "gridwarm-pf");
        CHECK(doc["code_version"] == GRIDWARM_VERSION);
        CHECK(doc["config"]["solve"]["tol"] == 1e-6);
        CHECK(doc["solution"]["v_real"].size() == 14);
    }

    SUBCASE("previous solution as init is a fixed point") {
        REQUIRE(cli("pf --case " + case14 + " --out pf2 -q") == 0);
        CHECK(cli("pf --case " + case14 + " --init pf2/pf_report.json", "pf3.json") == 0);
        CHECK(read_json("pf3.json")["iterations"].get<int>() <= 1);
    }

    SUBCASE("malformed case file") {
        write_text_file(in_work("bad.m"), "function mpc = bad\nmpc.bus = [1 2\n");
        CHECK(cli("pf --case bad.m") == 1);
    }

    SUBCASE("non-convergence is a numerical failure") {
        CHECK(cli("pf --case " + case118 + " --max-iter 1") == 2);
    }

    SUBCASE("init with the wrong bus count") {
        REQUIRE(cli("pf --case " + case14 + " --out pf4 -q") == 0);
        CHECK(cli("pf --case " + case118 + " --init pf4/pf_report.json") == 1);
    }
}

TEST_CASE("gen") {
    SUBCASE("default config on the 118-bus case") {
        REQUIRE(cli("gen --case " + case118 + " --out d118 -q") == 0);
        const auto split = read_json("d118/split.json");
        CHECK(split["train"].size() == 800);
        CHECK(split["val"].size() == 100);
        CHECK(split["test"].size() == 100);
        const auto m = read_json("d118/manifest.json");
        CHECK(m["stats"]["accepted"] == 1000);
        CHECK(m["spec"]["parameter"] == 2.0);
        CHECK(m["spec"]["selection"]["fraction"] == 0.5);
        CHECK(m["config"]["command"] == "gen");
        CHECK(m["code_version"] == GRIDWARM_VERSION);
    }

    SUBCASE("same seed twice gives identical files") {
        REQUIRE(cli("gen --case " + case14 + " --n-samples 10 --seed 7 --out g1 -q") == 0);
        REQUIRE(cli("gen --case " + case14 + " --n-samples 10 --seed 7 --out g2 -q --jobs 3") == 0);
        CHECK(same_tree("g1", "g2"));
        REQUIRE(cli("gen --case " + case14 + " --n-samples 10 --seed 8 --out g3 -q") == 0);
        CHECK(read_text_file(in_work("g1/samples.jsonl")) != read_text_file(in_work("g3/samples.jsonl")));
    }

    SUBCASE("parameter override is recorded") {
        REQUIRE(cli("gen --case " + case14 + " --n-samples 4 --parameter 1.2 --out g4 -q") == 0);
        CHECK(read_json("g4/manifest.json")["spec"]["parameter"] == 1.2);
    }

    SUBCASE("config file with a flag override") {
        write_text_file(in_work("gen.toml"), "[gen]\nn-samples = 6\nparameter = 1.5\nseed = 4\n");
        REQUIRE(cli("gen --config gen.toml --parameter 1.3 --case " + case14 + " --out g5 -q") == 0);
        const auto m = read_json("g5/manifest.json");
        CHECK(m["stats"]["accepted"] == 6);
        CHECK(m["spec"]["parameter"] == 1.3);
        CHECK(m["spec"]["seed"] == 4);
        write_text_file(in_work("bad.toml"), "[gen]\nno-such-option = 1\n");
        CHECK(cli("gen --config bad.toml --case " + case14 + " --out g6 -q") == 1);
    }

    SUBCASE("infeasible spec") {
        CHECK(cli("gen --case " + case14 + " --n-samples 6 --parameter 60 --fraction 1 --out g7 -q") == 2);
    }

    SUBCASE("bad ratios") {
        CHECK(cli("gen --case " + case14 + " --n-samples 6 --split 0.5,0.5,0.5 --out g8 -q") == 1);
    }
}

TEST_CASE("train") {
    ensure_dataset();

    SUBCASE("variant ps-zi with default hyperparameters") {
        REQUIRE(cli("train --data d14 --variant ps-zi --epochs 3 --out t1 -q") == 0);
        const auto m = read_json("t1/model.json");
        CHECK(m["sharing"] == "shared");
        CHECK(m["zi_enforce"] == true);
        CHECK(m["config"]["model"]["hidden"] == 64);
        CHECK(m["config"]["model"]["n_layer"] == 3);
        CHECK(m["config"]["train"]["optimizer"]["lr"] == 0.001);
        CHECK(m["code_version"] == GRIDWARM_VERSION);
        const auto r = read_json("t1/train_report.json");
        CHECK(r["format"] == "gridwarm-train-report");
        CHECK(r["report"]["epochs_run"] == 3);
        CHECK(!r["report"].contains("wall_time"));
        CHECK(r["eval"]["test"]["mse"].get<double>() >= 0.0);
    }

    SUBCASE("the other variants") {
        REQUIRE(cli("train --data d14 --variant cgrf --epochs 2 --out t2 -q") == 0);
        CHECK(read_json("t2/model.json")["sharing"] == "per_element");
        REQUIRE(cli("train --data d14 --variant ps --epochs 2 --out t3 -q") == 0);
        CHECK(read_json("t3/model.json")["zi_enforce"] == false);
        CHECK(cli("train --data d14 --variant huge --out t4 -q") == 1);
    }

    SUBCASE("same seed twice gives identical files") {
        REQUIRE(cli("train --data d14 --epochs 4 --seed 2 --out t5 -q") == 0);
        REQUIRE(cli("train --data d14 --epochs 4 --seed 2 --out t6 -q") == 0);
        CHECK(same_tree("t5", "t6"));
    }

    SUBCASE("divergence exits 2 with a report") {
        CHECK(cli("train --data d14 --epochs 5 --loss exact_nll --lr 10 --out t7 -q") == 2);
        CHECK(read_json("t7/train_report.json")["report"]["diverged"] == true);
    }

    SUBCASE("missing dataset") {
        CHECK(cli("train --data nowhere --out t8 -q") == 1);
    }
}

TEST_CASE("predict") {
    ensure_dataset();
    REQUIRE(cli("train --data d14 --variant ps --epochs 2 --out pm -q") == 0);
    REQUIRE(cli("train --data d14 --variant cgrf --epochs 2 --out pe -q") == 0);

    SUBCASE("predictions keyed by sample id, deterministic") {
        REQUIRE(cli("predict --model pm/model.json --data d14 --out p1 -q") == 0);
        REQUIRE(cli("predict --model pm/model.json --data d14 --out p2 -q") == 0);
        CHECK(same_tree("p1", "p2"));
        const auto doc = read_json("p1/predictions.json");
        const auto split = read_json("d14/split.json");
        CHECK(doc["predictions"].size() == split["test"].size());
        CHECK(doc["predictions"][0]["v_real"].size() == 14);
        CHECK(doc["predictions"][0].contains("sample_id"));
        CHECK(doc["config"]["command"] == "predict");
    }

    SUBCASE("single sample by id") {
        REQUIRE(cli("predict --model pm/model.json --data d14 --id 3 --out p3 -q") == 0);
        const auto doc = read_json("p3/predictions.json");
        REQUIRE(doc["predictions"].size() == 1);
        CHECK(doc["predictions"][0]["sample_id"] == 3);
        CHECK(cli("predict --model pm/model.json --data d14 --id 999 --out p4 -q") == 1);
    }

    SUBCASE("shared model on a larger grid, per-element model rejected") {
        REQUIRE(cli("gen --case " + case118 + " --n-samples 3 --split 0,0,1 --out d118s -q") == 0);
        CHECK(cli("predict --model pm/model.json --data d118s --out p5 -q") == 0);
        CHECK(read_json("p5/predictions.json")["predictions"][0]["v_real"].size() == 118);
        CHECK(cli("predict --model pe/model.json --data d118s --out p6 -q") == 1);
    }
}

TEST_CASE("bench") {
    ensure_dataset();
    for (const char* v : {"cgrf", "ps", "ps-zi"})
        REQUIRE(cli(std::string("train --data d14 --epochs 2 --variant ") + v + " --out b_" + v + " -q") == 0);
    const std::string models = " --model b_cgrf/model.json --model b_ps/model.json --model b_ps-zi/model.json";

    SUBCASE("rows per variant and rerun determinism") {
        REQUIRE(cli("bench --data d14" + models + " --svg --out bench1 -q") == 0);
        REQUIRE(cli("bench --data d14" + models + " --svg --out bench2 -q") == 0);
        CHECK(same_tree("bench1", "bench2"));
        const auto csv = read_text_file(in_work("bench1/bench.csv"));
        for (const char* m : {",flat,", ",vpre,", ",cgrf,", ",cgrf-ps,", ",cgrf-ps-zi,"})
            CHECK(csv.find(m) != std::string::npos);
        const auto rep = read_json("bench1/bench_report.json");
        CHECK(rep["format"] == "gridwarm-bench-report");
        CHECK(rep["config"]["models"].size() == 3);
        CHECK(rep["methods"].size() == 5);
        CHECK(fs::exists(in_work("bench1/bench.svg")));
    }

    SUBCASE("named models and label rows") {
        REQUIRE(cli("bench --data d14 --model a=b_ps/model.json --include-label --out bench3 -q") == 0);
        const auto csv = read_text_file(in_work("bench3/bench.csv"));
        CHECK(csv.find(",a,") != std::string::npos);
        CHECK(csv.find(",label,") != std::string::npos);
    }

    SUBCASE("missing model path") {
        CHECK(cli("bench --data d14 --model nope/model.json --out bench4 -q") != 0);
    }
}
