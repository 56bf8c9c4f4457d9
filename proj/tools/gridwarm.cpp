// gridwarm command line: pf, gen, train, predict, bench.
#include "gridwarm/bench.hpp"
#include "gridwarm/cgrf.hpp"
#include "gridwarm/dataset.hpp"
#include "gridwarm/error.hpp"
#include "gridwarm/grid_io.hpp"
#include "gridwarm/powerflow.hpp"
#include "gridwarm/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

using namespace gridwarm;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

int verbosity = 1;

void info(const std::string& msg) {
    if (verbosity >= 1)
        std::cerr << msg << '\n';
}

void debug(const std::string& msg) {
    if (verbosity >= 2)
        std::cerr << msg << '\n';
}

struct Common {
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string out;
};

// --seed, --jobs, --out and the verbosity flags on one subcommand. --config
// lives on the main app and falls through from every subcommand.
void add_common(CLI::App* sub, Common& c, bool out_required) {
    sub->add_option("--seed", c.seed, "Run seed")->capture_default_str();
    sub->add_option("--jobs", c.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    auto* out = sub->add_option("--out", c.out, "Output directory");
    if (out_required)
        out->required();
    sub->add_flag_function("-v,--verbose", [](std::int64_t n) { verbosity = 1 + static_cast<int>(n); }, "More log output");
    sub->add_flag_function("-q,--quiet", [](std::int64_t) { verbosity = 0; }, "Errors only");
}

void add_solve_options(CLI::App* sub, SolveOptions& o) {
    sub->add_option("--tol", o.tol, "NR tolerance on the max mismatch (p.u.)")->capture_default_str();
    sub->add_option("--max-iter", o.max_iter, "NR iteration cap")->capture_default_str();
    sub->add_flag("--q-limits", o.enforce_q_limits, "Enforce generator reactive limits");
    sub->add_option("--damping", o.damping, "NR step damping in (0, 1]")->capture_default_str();
}

ordered_json solve_json(const SolveOptions& o) {
    return {{"tol", o.tol}, {"max_iter", o.max_iter}, {"enforce_q_limits", o.enforce_q_limits}, {"damping", o.damping}};
}

ordered_json artifact(const std::string& format, const ordered_json& config) {
    return {{"format", format}, {"code_version", GRIDWARM_VERSION}, {"config", config}};
}

void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError(dir + ": cannot create directory: " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_json(const std::string& path, const ordered_json& doc) {
    write_text_file(path, doc.dump(1) + "\n");
    debug("wrote " + path);
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

std::vector<Sample> pick_split(const DatasetFiles& files, const std::string& split) {
    const auto& all = files.dataset.samples;
    if (split == "all")
        return all;
    const auto& s = files.split;
    return select_samples(all, split == "train" ? s.train : split == "val" ? s.val : s.test);
}

std::string variant_name(const CgrfModel& m) {
    if (m.sharing == Sharing::per_element)
        return "cgrf";
    return m.zi_enforce ? "cgrf-ps-zi" : "cgrf-ps";
}

// ---------------------------------------------------------------------------
// pf

struct PfArgs {
    Common common;
    std::string case_path;
    std::string init = "flat";
    SolveOptions solve;
};

int cmd_pf(const PfArgs& a) {
    const auto grid = load_case_file(a.case_path);
    VoltageState init = flat_start(grid);
    if (a.init != "flat") {
        const auto doc = nlohmann::json::parse(read_text_file(a.init));
        init = voltage_from_json(doc.contains("solution") ? doc["solution"] : doc, a.init);
        if (init.size() != grid.buses.size())
            throw ValidationError(a.init + ": init has " + std::to_string(init.size()) + " buses, case has " +
                                  std::to_string(grid.buses.size()));
    }
    const auto r = solve_nr(grid, init, a.solve);
    auto rep = to_json(r.report);
    rep.erase("wall_time");
    std::cout << rep.dump(1) << '\n';

    if (!a.common.out.empty()) {
        make_dir(a.common.out);
        ordered_json cfg = {{"command", "pf"}, {"case", a.case_path}, {"init", a.init}, {"solve", solve_json(a.solve)}};
        auto doc = artifact("gridwarm-pf", cfg);
        doc["report"] = rep;
        doc["solution"] = to_json(r.state);
        write_json(join(a.common.out, "pf_report.json"), doc);
    }
    if (!r.report.converged) {
        std::cerr << "power flow did not converge (" << to_string(r.report.status) << ")\n";
        return kExitNumerical;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
    Common common;
    std::string case_path;
    GenSpec spec;
    int top_k = 0;
    std::vector<double> split{0.8, 0.1, 0.1};
};

int cmd_gen(GenArgs a) {
    auto& spec = a.spec;
    spec.seed = a.common.seed;
    if (a.top_k > 0) {
        spec.selection.mode = LoadSelection::Mode::top_k;
        spec.selection.k = a.top_k;
    }
    check_spec(spec);
    const std::array<double, 3> ratios{a.split[0], a.split[1], a.split[2]};
    const auto base = load_case_file(a.case_path);
    info("generating " + std::to_string(spec.n_samples) + " samples on " + a.case_path);
    const auto ds = generate_dataset(base, spec, a.common.jobs);
    const auto split = split_dataset(ds.samples.size(), ratios, spec.seed);
    ordered_json cfg = {{"command", "gen"}, {"case", a.case_path}, {"spec", to_json(spec)}, {"split", a.split}};
    write_dataset(a.common.out, ds, split, ratios, spec.seed, cfg);
    info("accepted " + std::to_string(ds.manifest.stats.accepted) + ", discarded " +
         std::to_string(ds.manifest.stats.discarded) + "; split " + std::to_string(split.train.size()) + "/" +
         std::to_string(split.val.size()) + "/" + std::to_string(split.test.size()));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    Common common;
    std::string data;
    std::string variant = "ps";
    std::string loss = "surrogate";
    std::string activation = "tanh";
    TrainConfig train;
    ModelConfig model;
    bool no_standardize = false;
    bool timing = false;
    int log_every = 10;
};

int cmd_train(TrainArgs a) {
    auto& tc = a.train;
    auto& mc = a.model;
    tc.seed = a.common.seed;
    tc.jobs = a.common.jobs;
    tc.loss = loss_kind_from_string(a.loss);
    tc.standardize = !a.no_standardize;
    check_config(tc);
    mc.activation = activation_from_string(a.activation);
    mc.sharing = a.variant == "cgrf" ? Sharing::per_element : Sharing::shared;
    mc.zi_enforce = a.variant == "ps-zi";

    const auto files = read_dataset(a.data);
    mc.bus_count = files.dataset.manifest.base.buses.size();
    mc.branch_count = files.dataset.manifest.base.branches.size();
    const auto train_set = pick_split(files, "train");
    const auto val_set = pick_split(files, "val");
    const auto test_set = pick_split(files, "test");
    if (train_set.empty())
        throw ValidationError(a.data + ": the train split is empty");

    auto model = init_model(mc, tc.seed);
    info("training " + variant_name(model) + " (" + std::to_string(model.parameter_count()) + " parameters) on " +
         std::to_string(train_set.size()) + " samples, validating on " + std::to_string(val_set.size()));
    const int every = std::max(1, a.log_every);
    const auto result = train(model, train_set, val_set, tc, [&](int epoch, double tl, double vl, double lr) {
        if ((epoch + 1) % every == 0 || epoch == 0)
            info("epoch " + std::to_string(epoch + 1) + " train " + fmt("%.6e", tl) + " val " + fmt("%.6e", vl) +
                 " lr " + fmt("%.3g", lr));
    });

    ordered_json cfg = {{"command", "train"},
                        {"data", a.data},
                        {"variant", a.variant},
                        {"model", {{"sharing", to_string(mc.sharing)},
                                   {"zi_enforce", mc.zi_enforce},
                                   {"n_layer", mc.n_layer},
                                   {"hidden", mc.hidden},
                                   {"activation", a.activation},
                                   {"output_scale", mc.output_scale}}},
                        {"train", to_json(tc)}};
    make_dir(a.common.out);
    auto rep = artifact("gridwarm-train-report", cfg);
    rep["report"] = to_json(result.report, a.timing);
    if (result.report.diverged) {
        write_json(join(a.common.out, "train_report.json"), rep);
        std::cerr << "training stopped, " << result.report.stop_reason << '\n';
        return kExitNumerical;
    }
    rep["eval"] = {{"val", val_set.empty() ? ordered_json(nullptr) : to_json(eval_model(result.model, val_set, tc.jobs))},
                   {"test", test_set.empty() ? ordered_json(nullptr) : to_json(eval_model(result.model, test_set, tc.jobs))}};
    if (!test_set.empty()) {
        rep["eval"]["test"].erase("residuals");
        info("test mse " + fmt("%.6e", rep["eval"]["test"]["mse"].get<double>()) + " vs v_pre " +
             fmt("%.6e", rep["eval"]["test"]["baseline_mse_vpre"].get<double>()));
    }
    if (!val_set.empty())
        rep["eval"]["val"].erase("residuals");
    write_json(join(a.common.out, "train_report.json"), rep);

    auto doc = model_to_json(result.model);
    doc["config"] = cfg;
    write_json(join(a.common.out, "model.json"), doc);
    info("best epoch " + std::to_string(result.report.best_epoch + 1) + " of " +
         std::to_string(result.report.epochs_run) + "; model written to " + join(a.common.out, "model.json"));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
    Common common;
    std::string model;
    std::string data;
    std::string split = "test";
    std::vector<int> ids;
};

int cmd_predict(const PredictArgs& a) {
    const auto model = model_from_json(nlohmann::json::parse(read_text_file(a.model)));
    const auto files = read_dataset(a.data);
    std::vector<Sample> samples;
    if (a.ids.empty()) {
        samples = pick_split(files, a.split);
    } else {
        for (int id : a.ids) {
            const auto& all = files.dataset.samples;
            const auto it = std::find_if(all.begin(), all.end(), [&](const Sample& s) { return s.id == id; });
            if (it == all.end())
                throw ValidationError(a.data + ": no sample with id " + std::to_string(id));
            samples.push_back(*it);
        }
    }
    for (const auto& s : samples)
        model.check_compatible(extract_features(s));

    std::vector<VoltageState> states(samples.size());
    for (std::size_t j = 0; j < samples.size(); ++j)
        states[j] = predict(model, samples[j]);

    ordered_json cfg = {{"command", "predict"}, {"model", a.model}, {"data", a.data}, {"split", a.split}, {"ids", a.ids}};
    auto doc = artifact("gridwarm-predictions", cfg);
    doc["model"] = {{"variant", variant_name(model)}, {"parameter_count", model.parameter_count()}};
    if (!samples.empty()) {
        auto ev = to_json(eval_model(model, samples, a.common.jobs));
        ev.erase("residuals");
        doc["metrics"] = ev;
    }
    ordered_json preds = ordered_json::array();
    for (std::size_t j = 0; j < samples.size(); ++j) {
        ordered_json p = {{"sample_id", samples[j].id}};
        p.update(to_json(states[j]));
        preds.push_back(p);
    }
    doc["predictions"] = preds;
    make_dir(a.common.out);
    write_json(join(a.common.out, "predictions.json"), doc);
    info("wrote " + std::to_string(samples.size()) + " predictions");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    Common common;
    std::string data;
    std::vector<std::string> models;
    std::string split = "test";
    BenchOptions bench;
    bool svg = false;
};

int cmd_bench(BenchArgs a) {
    a.bench.jobs = a.common.jobs;
    const auto files = read_dataset(a.data);
    std::vector<BenchModel> models;
    ordered_json model_echo = ordered_json::array();
    for (const auto& spec : a.models) {
        std::string name, path = spec;
        if (const auto eq = spec.find('='); eq != std::string::npos && !fs::exists(spec)) {
            name = spec.substr(0, eq);
            path = spec.substr(eq + 1);
        }
        if (!fs::exists(path))
            throw IoError("cannot open '" + path + "' for reading");
        auto m = model_from_json(nlohmann::json::parse(read_text_file(path)));
        if (name.empty())
            name = variant_name(m);
        model_echo.push_back({{"name", name}, {"path", path}, {"variant", variant_name(m)},
                              {"parameter_count", m.parameter_count()}});
        models.push_back({name, std::move(m)});
    }
    const auto samples = pick_split(files, a.split);
    info("benchmarking " + std::to_string(samples.size()) + " samples, " + std::to_string(models.size()) + " models");
    const auto rows = run_bench(samples, models, a.bench);
    const auto summary = summarize(rows);

    ordered_json cfg = {{"command", "bench"},       {"data", a.data},
                        {"models", model_echo},     {"split", a.split},
                        {"solve", solve_json(a.bench.solve)}, {"include_label", a.bench.include_label},
                        {"timing", a.bench.timing}};
    make_dir(a.common.out);
    emit_csv(rows, join(a.common.out, "bench.csv"));
    emit_report(summary, join(a.common.out, "bench_report.json"), artifact("gridwarm-bench-report", cfg));
    if (a.svg)
        emit_svg(rows, join(a.common.out, "bench.svg"));
    for (const auto& m : summary.methods)
        info(m.method + ": median " + fmt("%.1f", m.median) + " iterations, converged " + std::to_string(m.converged) +
             "/" + std::to_string(m.runs));
    for (const auto& c : summary.comparisons)
        info(c.method + " vs " + c.baseline + ": speedup " + fmt("%.3f", c.speedup) + ", win rate " +
             fmt("%.3f", c.win_rate) + " over " + std::to_string(c.mutual) + " samples");
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gridwarm: warm-starting contingency power flow with a conditional Gaussian random field"};
    app.set_version_flag("--version", GRIDWARM_VERSION);
    app.require_subcommand(1, 1);
    app.fallthrough();
    // One [pf]/[gen]/[train]/[predict]/[bench] section per subcommand; values
    // only fill options not given on the command line.
    app.set_config("--config", "", "TOML/INI file with a section per subcommand; flags win over file values");
    app.allow_config_extras(CLI::config_extras_mode::error);

    PfArgs pf;
    auto* pf_cmd = app.add_subcommand("pf", "Solve one case with Newton-Raphson");
    add_common(pf_cmd, pf.common, false);
    pf_cmd->add_option("--case", pf.case_path, "Case file (.m MATPOWER or native JSON)")->required()->check(CLI::ExistingFile);
    pf_cmd->add_option("--init", pf.init, "flat, or a JSON file with v_real/v_imag (a pf_report.json works)")
        ->capture_default_str();
    add_solve_options(pf_cmd, pf.solve);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a labelled contingency dataset");
    add_common(gen_cmd, gen.common, true);
    gen_cmd->add_option("--case", gen.case_path, "Base case file")->required()->check(CLI::ExistingFile);
    gen_cmd->add_option("--n-samples", gen.spec.n_samples, "Samples to generate")->capture_default_str();
    gen_cmd->add_option("--load-lo", gen.spec.load_scale_lo, "Lower load scale of the pre case")->capture_default_str();
    gen_cmd->add_option("--load-hi", gen.spec.load_scale_hi, "Upper load scale of the pre case")->capture_default_str();
    gen_cmd->add_option("--lines-min", gen.spec.lines_removed_min, "Fewest lines taken out")->capture_default_str();
    gen_cmd->add_option("--lines-max", gen.spec.lines_removed_max, "Most lines taken out")->capture_default_str();
    gen_cmd->add_option("--fraction", gen.spec.selection.fraction, "Fraction of load buses manipulated")
        ->capture_default_str();
    gen_cmd->add_option("--top-k", gen.top_k, "Manipulate the k largest loads instead of a random fraction");
    gen_cmd->add_option("--parameter", gen.spec.parameter, "Load multiplier at manipulated buses")->capture_default_str();
    gen_cmd->add_option("--split", gen.split, "train,val,test ratios")->delimiter(',')->expected(3)->capture_default_str();
    add_solve_options(gen_cmd, gen.spec.solve);

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "Train a cGRF variant on a dataset");
    add_common(tr_cmd, tr.common, true);
    tr_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    tr_cmd->add_option("--variant", tr.variant, "cgrf (per-element nets), ps (shared) or ps-zi (shared, zero injection)")
        ->check(CLI::IsMember({"cgrf", "ps", "ps-zi"}))
        ->capture_default_str();
    tr_cmd->add_option("--loss", tr.loss, "surrogate or exact_nll")
        ->check(CLI::IsMember({"surrogate", "exact_nll"}))
        ->capture_default_str();
    tr_cmd->add_option("--epochs", tr.train.epochs, "Epoch cap")->capture_default_str();
    tr_cmd->add_option("--batch-size", tr.train.batch_size, "Samples per Adam step")->capture_default_str();
    tr_cmd->add_option("--lr", tr.train.lr, "Adam learning rate")->capture_default_str();
    tr_cmd->add_option("--lr-period", tr.train.lr_period, "Epochs between learning-rate cuts")->capture_default_str();
    tr_cmd->add_option("--lr-factor", tr.train.lr_factor, "Learning-rate cut factor")->capture_default_str();
    tr_cmd->add_option("--patience", tr.train.patience, "Early-stopping patience in epochs, 0 disables")
        ->capture_default_str();
    tr_cmd->add_option("--grad-clip", tr.train.grad_clip, "Global gradient norm cap, 0 disables")->capture_default_str();
    tr_cmd->add_option("--n-layer", tr.model.n_layer, "Linear layers per network")->capture_default_str();
    tr_cmd->add_option("--hidden", tr.model.hidden, "Hidden width")->capture_default_str();
    tr_cmd->add_option("--activation", tr.activation, "tanh or relu")
        ->check(CLI::IsMember({"tanh", "relu"}))
        ->capture_default_str();
    tr_cmd->add_option("--output-scale", tr.model.output_scale, "Scale of the final-layer init")->capture_default_str();
    tr_cmd->add_flag("--no-standardize", tr.no_standardize, "Feed raw features");
    tr_cmd->add_flag("--timing", tr.timing, "Record wall time in the report (makes it run-dependent)");
    tr_cmd->add_option("--log-every", tr.log_every, "Epochs between progress lines")->capture_default_str();

    PredictArgs pr;
    auto* pr_cmd = app.add_subcommand("predict", "Predict post-contingency voltages");
    add_common(pr_cmd, pr.common, true);
    pr_cmd->add_option("--model", pr.model, "Model file")->required()->check(CLI::ExistingFile);
    pr_cmd->add_option("--data", pr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    pr_cmd->add_option("--split", pr.split, "train, val, test or all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
    pr_cmd->add_option("--id", pr.ids, "Predict only these sample ids");

    BenchArgs be;
    auto* be_cmd = app.add_subcommand("bench", "Compare NR iterations from flat, V_pre and model starts");
    add_common(be_cmd, be.common, true);
    be_cmd->add_option("--data", be.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    be_cmd->add_option("--model", be.models, "Model file, optionally name=path; repeatable");
    be_cmd->add_option("--split", be.split, "train, val, test or all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
    be_cmd->add_flag("--include-label", be.bench.include_label, "Add rows started from the true solution");
    be_cmd->add_flag("--svg", be.svg, "Also write bench.svg");
    be_cmd->add_flag("--timing", be.bench.timing, "Record wall time per row (makes output run-dependent)");
    add_solve_options(be_cmd, be.bench.solve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*pf_cmd)
            return cmd_pf(pf);
        if (*gen_cmd)
            return cmd_gen(gen);
        if (*tr_cmd)
            return cmd_train(tr);
        if (*pr_cmd)
            return cmd_predict(pr);
        if (*be_cmd)
            return cmd_bench(be);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
