#pragma once

#include "gridwarm/contingency.hpp"
#include "gridwarm/features.hpp"

#include <filesystem>
#include <string>

#include <json.hpp>

namespace gridwarm {

// On-disk layout of a dataset directory:
//   manifest.json  format tag, version, base case, spec, stats, diagnostics, config echo
//   samples.jsonl  one sample per line, cases stored as deltas against the base
//   split.json     train/val/test sample ids

inline constexpr int kDatasetFormatVersion = 1;

/// Loads, branch status and generator setpoints that differ from `base`.
/// Any other difference cannot be expressed and throws Error.
nlohmann::ordered_json case_delta(const GridCase& base, const GridCase& grid);
GridCase apply_case_delta(const GridCase& base, const nlohmann::json& delta, const std::string& path = "$");

/// One JSONL record. Features are embedded for external readers.
nlohmann::ordered_json sample_to_json(const GridCase& base, const Sample& sample);
Sample sample_from_json(const GridCase& base, const nlohmann::json& doc, const std::string& path = "$");

nlohmann::ordered_json manifest_to_json(const DatasetManifest& m, const nlohmann::json& config = nullptr);
DatasetManifest manifest_from_json(const nlohmann::json& doc);

nlohmann::ordered_json split_to_json(const SplitIndices& split, const std::array<double, 3>& ratios,
                                     std::uint64_t seed);
SplitIndices split_from_json(const nlohmann::json& doc);

struct DatasetFiles {
    Dataset dataset;
    SplitIndices split;
};

/// Writes the three files into `dir`, creating it if needed.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds, const SplitIndices& split,
                   const std::array<double, 3>& ratios, std::uint64_t split_seed,
                   const nlohmann::json& config = nullptr);

DatasetFiles read_dataset(const std::filesystem::path& dir);

/// Samples at the given positions, in that order.
std::vector<Sample> select_samples(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx);

} // namespace gridwarm
