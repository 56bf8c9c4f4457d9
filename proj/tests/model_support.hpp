#pragma once

#include "gridwarm/cgrf.hpp"
#include "gridwarm/contingency.hpp"

#include <map>
#include <random>
#include <vector>

namespace gridwarm::testing {

// Random connected graph on n buses: a spanning path plus `extra` chords.
inline GraphFeatures random_graph(std::mt19937_64& rng, std::size_t n, std::size_t extra) {
    std::normal_distribution<double> N(0.0, 1.0);
    GraphFeatures f;
    f.node = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(n), kNodeFeatureCount, [&] { return N(rng); });
    for (std::size_t i = 1; i < n; ++i)
        f.edges.push_back({i - 1, i, i - 1});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (f.edges.size() < n - 1 + extra && n > 2) {
        auto a = pick(rng), b = pick(rng);
        if (a == b)
            continue;
        f.edges.push_back({a, b, f.edges.size()});
    }
    f.edge = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(f.edges.size()), kEdgeFeatureCount,
                                          [&] { return N(rng); });
    f.zero_injection.assign(n, false);
    for (std::size_t i = 0; i < n; ++i)
        f.zero_injection[i] = (rng() % 3) == 0;
    f.branch_count = f.edges.size();
    return f;
}

// Random symmetric diagonally dominant block system on the given graph.
inline PrecisionSystem random_pd_system(std::mt19937_64& rng, const GraphFeatures& g) {
    std::normal_distribution<double> N(0.0, 1.0);
    PrecisionSystem s;
    s.n = g.bus_count();
    s.edges = g.edges;
    s.off.resize(g.edges.size());
    std::vector<double> rowsum(s.n, 0.0);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        s.off[k] = Eigen::Matrix2d::NullaryExpr([&] { return N(rng); });
        const double w = s.off[k].cwiseAbs().rowwise().sum().maxCoeff() + s.off[k].cwiseAbs().colwise().sum().maxCoeff();
        rowsum[g.edges[k].from] += w;
        rowsum[g.edges[k].to] += w;
    }
    s.diag.resize(s.n);
    for (std::size_t i = 0; i < s.n; ++i) {
        const double b = 0.3 * N(rng);
        s.diag[i] << rowsum[i] + 1.0 + std::abs(b) + std::abs(N(rng)), b, b, rowsum[i] + 1.0 + std::abs(b) + std::abs(N(rng));
    }
    s.eta = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(2 * s.n), [&] { return 3.0 * N(rng); });
    return s;
}

// Shared-mode model with all weights random, including the output layer.
inline CgrfModel random_model(std::uint64_t seed, bool zi = false, double output_scale = 0.3) {
    ModelConfig c;
    c.zi_enforce = zi;
    c.output_scale = output_scale;
    auto m = init_model(c, seed);
    m.standardizer.enabled = false;
    return m;
}

// Moves bus at position i to position perm[i] and renames it perm[i] + 101.
// A non-empty branch_perm also moves branch k to position branch_perm[k].
inline Sample permute_sample(const Sample& s, const std::vector<std::size_t>& perm,
                             const std::vector<std::size_t>& branch_perm = {}) {
    auto relabel = [&](const GridCase& g) {
        GridCase out = g;
        std::map<int, int> id;
        for (std::size_t i = 0; i < g.buses.size(); ++i) {
            id[g.buses[i].id] = static_cast<int>(perm[i]) + 101;
            out.buses[perm[i]] = g.buses[i];
            out.buses[perm[i]].id = static_cast<int>(perm[i]) + 101;
        }
        if (!branch_perm.empty())
            for (std::size_t k = 0; k < g.branches.size(); ++k)
                out.branches[branch_perm[k]] = g.branches[k];
        for (auto& b : out.branches) {
            b.from_bus = id.at(b.from_bus);
            b.to_bus = id.at(b.to_bus);
        }
        for (auto& gen : out.generators)
            gen.bus = id.at(gen.bus);
        for (auto& l : out.loads)
            l.bus = id.at(l.bus);
        return std::pair{out, id};
    };
    auto permute_v = [&](const VoltageState& v) {
        VoltageState out = v;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            out.v_real[perm[i]] = v.v_real[i];
            out.v_imag[perm[i]] = v.v_imag[i];
        }
        return out;
    };
    Sample out = s;
    auto [pre, id] = relabel(s.pre_case);
    out.pre_case = pre;
    out.post_case = relabel(s.post_case).first;
    out.pre_solution = permute_v(s.pre_solution);
    out.label = permute_v(s.label);
    for (auto& b : out.contingency.locations)
        b = id.at(b);
    return out;
}

} // namespace gridwarm::testing
