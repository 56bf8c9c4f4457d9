#pragma once

#include "gridwarm/cgrf.hpp"
#include "gridwarm/contingency.hpp"
#include "gridwarm/powerflow.hpp"

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridwarm {

/// A trained model under the name its rows carry in init_method.
struct BenchModel {
    std::string name;
    CgrfModel model;
};

struct BenchOptions {
    SolveOptions solve;
    int jobs = 1;
    bool include_label = false;  // extra "label" rows initialised at the true solution
    bool timing = false;         // wall_time stays 0 unless set
};

struct BenchRow {
    int sample_id = 0;
    std::string init_method;
    int iterations = 0;
    bool converged = false;
    double max_mismatch = 0;
    std::optional<double> prediction_mse;  // model rows only
    double wall_time = 0;
};

/// Solves every sample's post case once per init method with the same
/// options. Rows come back ordered by sample, then flat, vpre, each model in
/// the given order, label. A model whose inference fails leaves a
/// non-converged row with zero iterations.
std::vector<BenchRow> run_bench(const std::vector<Sample>& samples, const std::vector<BenchModel>& models,
                                const BenchOptions& opts = {});

struct MethodStats {
    std::string method;
    int runs = 0;
    int converged = 0;
    double convergence_rate = 0;
    // iterations over the converged runs
    double median = 0;
    double mean = 0;
    double std = 0;
};

/// `method` against `baseline` over the samples both converged on.
struct Comparison {
    std::string method;
    std::string baseline;
    int mutual = 0;
    int baseline_only = 0;  // converged under baseline only
    int method_only = 0;
    double median_baseline = 0;
    double median_method = 0;
    double speedup = 0;   // median_baseline / median_method
    double win_rate = 0;  // fraction with method iterations strictly fewer
};

struct BenchSummary {
    int sample_count = 0;
    std::vector<MethodStats> methods;
    std::vector<Comparison> comparisons;

    const MethodStats& stats(const std::string& method) const;
    const Comparison& comparison(const std::string& method, const std::string& baseline) const;
};

/// Stats per method in row order; every non-flat method against flat, and
/// every model against vpre.
BenchSummary summarize(const std::vector<BenchRow>& rows);
Comparison compare(const std::vector<BenchRow>& rows, const std::string& method, const std::string& baseline);

double median(std::vector<double> xs);

nlohmann::ordered_json to_json(const BenchSummary& s);

inline constexpr const char* kBenchCsvHeader =
    "sample_id,init_method,iterations,converged,max_mismatch,prediction_mse,wall_time";

std::string bench_csv(const std::vector<BenchRow>& rows);
void emit_csv(const std::vector<BenchRow>& rows, const std::string& path);

/// Summary JSON, with `extra` members (config echo and such) merged in front.
void emit_report(const BenchSummary& summary, const std::string& path, const nlohmann::ordered_json& extra = {});

/// Box plot of converged iterations, one <g class="box"> per method.
std::string bench_svg(const std::vector<BenchRow>& rows);
void emit_svg(const std::vector<BenchRow>& rows, const std::string& path);

} // namespace gridwarm
