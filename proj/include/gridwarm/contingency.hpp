#pragma once

#include "gridwarm/grid.hpp"
#include "gridwarm/parallel.hpp"
#include "gridwarm/powerflow.hpp"
#include "gridwarm/rng.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridwarm {

enum class ContingencyKind { madiot };

/// (type, locations, parameter): scale every load at `locations` by `parameter`.
struct Contingency {
    ContingencyKind kind = ContingencyKind::madiot;
    std::vector<int> locations;
    double parameter = 1.0;

    bool operator==(const Contingency&) const = default;
};

struct LoadSelection {
    enum class Mode { random_fraction, top_k };
    Mode mode = Mode::random_fraction;
    double fraction = 0.5;
    int k = 1;
};

/// Data generation settings. Defaults follow the 118-bus experiment.
struct GenSpec {
    int n_samples = 1000;
    double load_scale_lo = 0.95;
    double load_scale_hi = 1.05;
    int lines_removed_min = 1;
    int lines_removed_max = 2;
    LoadSelection selection;
    double parameter = 2.0;
    std::uint64_t seed = 0;
    SolveOptions solve;
};

/// Throws Error when the spec breaks its own invariants.
void check_spec(const GenSpec& spec);

struct SampleMeta {
    std::uint64_t seed = 0;  // derived per-sample seed of the accepted draw
    bool converged = false;
    int pre_iterations = 0;
    int label_iterations = 0;
    int discarded_draws = 0;
};

struct Sample {
    int id = 0;
    GridCase pre_case;
    VoltageState pre_solution;
    Contingency contingency;
    GridCase post_case;
    VoltageState label;
    SampleMeta meta;
};

struct DatasetStats {
    int accepted = 0;
    int discarded = 0;
    int attempts = 0;
};

struct DatasetManifest {
    GridCase base;
    GenSpec spec;
    DatasetStats stats;
    std::vector<Diagnostic> diagnostics;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> samples;
};

/// Load-carrying buses (in-service load with nonzero p or q), in bus order.
std::vector<int> load_buses(const GridCase& grid);

/// Total in-service active load.
double total_load(const GridCase& grid);

GridCase perturb_pre_case(const GridCase& base, Rng& rng, const GenSpec& spec,
                          std::vector<Diagnostic>* diagnostics = nullptr);

Contingency make_madiot(const GridCase& grid, Rng& rng, const GenSpec& spec,
                        std::vector<Diagnostic>* diagnostics = nullptr);

/// Scales loads at the contingency locations and covers the change by droop.
GridCase apply_contingency(const GridCase& grid, const Contingency& c,
                           std::vector<Diagnostic>* diagnostics = nullptr);

/// One accepted sample for index `j`; redraws until the pre and post cases
/// both solve. Returns nullopt if `max_draws` draws were all discarded.
std::optional<Sample> generate_sample(const GridCase& base, const GenSpec& spec, int j, int max_draws);

/// Runs the three-step generator for every sample index, optionally on
/// `jobs` worker threads. Output is identical for any `jobs`. Throws NumericalError
/// when more than half of all draws are discarded.
Dataset generate_dataset(const GridCase& base, const GenSpec& spec, int jobs = 1);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Deterministic shuffled partition of [0, n). Ratios must sum to 1.
SplitIndices split_dataset(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed);


nlohmann::ordered_json to_json(const Contingency& c);
Contingency contingency_from_json(const nlohmann::json& doc, const std::string& path = "$");
nlohmann::ordered_json to_json(const GenSpec& spec);
GenSpec gen_spec_from_json(const nlohmann::json& doc, const std::string& path = "$");

} // namespace gridwarm
