#pragma once

#include "gridwarm/contingency.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace gridwarm {

inline constexpr int kNodeFeatureCount = 10;
inline constexpr int kEdgeFeatureCount = 3;

/// Column order of the node feature matrix.
inline constexpr std::array<const char*, kNodeFeatureCount> kNodeFeatureNames = {
    "v_real", "v_imag", "p", "q", "i_real", "i_imag", "q_shunt", "dp_gen", "dp_load", "dq_load"};
inline constexpr std::array<const char*, kEdgeFeatureCount> kEdgeFeatureNames = {"g", "b", "b_sh"};

/// One in-service branch of the post-contingency topology.
struct EdgeRef {
    std::size_t from = 0;    // bus position
    std::size_t to = 0;      // bus position
    std::size_t branch = 0;  // index into GridCase::branches

    bool operator==(const EdgeRef&) const = default;
};

/// Model inputs for one sample: row i of `node` belongs to bus position i,
/// row k of `edge` to edges[k].
struct GraphFeatures {
    Eigen::MatrixXd node;  // n x 10
    Eigen::MatrixXd edge;  // m x 3
    std::vector<EdgeRef> edges;
    std::vector<bool> zero_injection;  // no in-service generation and no load
    std::size_t branch_count = 0;      // size of GridCase::branches, for per-element models

    std::size_t bus_count() const { return static_cast<std::size_t>(node.rows()); }
};

/// Columns 0-6 come from the pre-contingency solved state; 7-9 are the
/// generation and load changes between pre_case and post_case.
Eigen::MatrixXd extract_node_features(const Sample& sample);

/// (G, B, B_sh) with G + jB = 1 / (r + jx), for in-service branches only.
Eigen::MatrixXd extract_edge_features(const GridCase& grid, std::vector<EdgeRef>* edges = nullptr);

/// True at buses with no in-service generator and no in-service load.
std::vector<bool> zero_injection_buses(const GridCase& grid);

GraphFeatures extract_features(const Sample& sample);

/// Per-column z-scoring of node and edge features.
struct Standardizer {
    static constexpr double kStdFloor = 1e-6;

    bool enabled = true;
    Eigen::VectorXd node_mean = Eigen::VectorXd::Zero(kNodeFeatureCount);
    Eigen::VectorXd node_std = Eigen::VectorXd::Ones(kNodeFeatureCount);
    Eigen::VectorXd edge_mean = Eigen::VectorXd::Zero(kEdgeFeatureCount);
    Eigen::VectorXd edge_std = Eigen::VectorXd::Ones(kEdgeFeatureCount);

    bool operator==(const Standardizer& other) const;
};

/// Pools every node row and every edge row of the training samples.
Standardizer fit_standardizer(std::span<const GraphFeatures> train);

GraphFeatures apply_standardizer(const Standardizer& s, GraphFeatures features);

nlohmann::ordered_json to_json(const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::json& doc, const std::string& path = "$");

} // namespace gridwarm
