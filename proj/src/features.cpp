#include "gridwarm/features.hpp"

#include "gridwarm/error.hpp"

#include <cmath>
#include <unordered_map>

namespace gridwarm {

namespace {

std::unordered_map<int, std::size_t> positions(const GridCase& grid) {
    std::unordered_map<int, std::size_t> idx;
    for (std::size_t i = 0; i < grid.buses.size(); ++i)
        idx[grid.buses[i].id] = i;
    return idx;
}

} // namespace

Eigen::MatrixXd extract_node_features(const Sample& sample) {
    const auto& pre = sample.pre_case;
    const auto& post = sample.post_case;
    const auto n = pre.buses.size();
    if (post.buses.size() != n || sample.pre_solution.size() != n)
        throw Error("sample " + std::to_string(sample.id) + ": pre/post cases disagree in bus count");
    if (pre.generators.size() != post.generators.size() || pre.loads.size() != post.loads.size())
        throw Error("sample " + std::to_string(sample.id) + ": pre/post cases disagree in generators or loads");

    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), kNodeFeatureCount);
    const auto inj = compute_injections(pre, sample.pre_solution);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        x(r, 0) = sample.pre_solution.v_real[i];
        x(r, 1) = sample.pre_solution.v_imag[i];
        x(r, 2) = inj[i].p;
        x(r, 3) = inj[i].q;
        x(r, 4) = inj[i].i_real;
        x(r, 5) = inj[i].i_imag;
        x(r, 6) = inj[i].q_shunt;
    }
    const auto idx = positions(pre);
    for (std::size_t g = 0; g < pre.generators.size(); ++g) {
        const double d = (post.generators[g].in_service ? post.generators[g].p_set : 0.0) -
                         (pre.generators[g].in_service ? pre.generators[g].p_set : 0.0);
        x(static_cast<Eigen::Index>(idx.at(pre.generators[g].bus)), 7) += d;
    }
    for (std::size_t l = 0; l < pre.loads.size(); ++l) {
        const auto& a = pre.loads[l];
        const auto& b = post.loads[l];
        const auto r = static_cast<Eigen::Index>(idx.at(a.bus));
        x(r, 8) += (b.in_service ? b.p : 0.0) - (a.in_service ? a.p : 0.0);
        x(r, 9) += (b.in_service ? b.q : 0.0) - (a.in_service ? a.q : 0.0);
    }
    return x;
}

Eigen::MatrixXd extract_edge_features(const GridCase& grid, std::vector<EdgeRef>* edges) {
    const auto idx = positions(grid);
    std::vector<std::size_t> live;
    for (std::size_t k = 0; k < grid.branches.size(); ++k)
        if (grid.branches[k].in_service)
            live.push_back(k);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(live.size()), kEdgeFeatureCount);
    if (edges)
        edges->clear();
    for (std::size_t e = 0; e < live.size(); ++e) {
        const auto& br = grid.branches[live[e]];
        const double z2 = br.r * br.r + br.x * br.x;
        const auto r = static_cast<Eigen::Index>(e);
        x(r, 0) = br.r / z2;
        x(r, 1) = -br.x / z2;
        x(r, 2) = br.b_charging;
        if (edges)
            edges->push_back({idx.at(br.from_bus), idx.at(br.to_bus), live[e]});
    }
    return x;
}

std::vector<bool> zero_injection_buses(const GridCase& grid) {
    const auto idx = positions(grid);
    std::vector<bool> zi(grid.buses.size(), true);
    for (const auto& g : grid.generators)
        if (g.in_service)
            zi[idx.at(g.bus)] = false;
    for (const auto& l : grid.loads)
        if (l.in_service && (l.p != 0.0 || l.q != 0.0))
            zi[idx.at(l.bus)] = false;
    return zi;
}

GraphFeatures extract_features(const Sample& sample) {
    GraphFeatures f;
    f.node = extract_node_features(sample);
    f.edge = extract_edge_features(sample.post_case, &f.edges);
    f.zero_injection = zero_injection_buses(sample.post_case);
    f.branch_count = sample.post_case.branches.size();
    return f;
}

bool Standardizer::operator==(const Standardizer& o) const {
    return enabled == o.enabled && node_mean == o.node_mean && node_std == o.node_std && edge_mean == o.edge_mean &&
           edge_std == o.edge_std;
}

Standardizer fit_standardizer(std::span<const GraphFeatures> train) {
    if (train.size() < 2)
        throw Error("fitting a standardizer needs at least two training samples");
    Standardizer s;
    auto fit = [](auto rows_of, std::span<const GraphFeatures> data, int cols, Eigen::VectorXd& mean, Eigen::VectorXd& sd) {
        mean = Eigen::VectorXd::Zero(cols);
        Eigen::VectorXd sq = Eigen::VectorXd::Zero(cols);
        double count = 0;
        for (const auto& f : data) {
            const Eigen::MatrixXd& m = rows_of(f);
            mean += m.colwise().sum().transpose();
            count += static_cast<double>(m.rows());
        }
        if (count == 0) {
            sd = Eigen::VectorXd::Ones(cols);
            return;
        }
        mean /= count;
        for (const auto& f : data) {
            const Eigen::MatrixXd& m = rows_of(f);
            sq += (m.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
        }
        sd = (sq / count).cwiseSqrt().cwiseMax(Standardizer::kStdFloor);
    };
    fit([](const GraphFeatures& f) -> const Eigen::MatrixXd& { return f.node; }, train, kNodeFeatureCount, s.node_mean,
        s.node_std);
    fit([](const GraphFeatures& f) -> const Eigen::MatrixXd& { return f.edge; }, train, kEdgeFeatureCount, s.edge_mean,
        s.edge_std);
    return s;
}

GraphFeatures apply_standardizer(const Standardizer& s, GraphFeatures f) {
    if (!s.enabled)
        return f;
    f.node = ((f.node.rowwise() - s.node_mean.transpose()).array().rowwise() / s.node_std.transpose().array()).matrix();
    if (f.edge.rows() > 0)
        f.edge = ((f.edge.rowwise() - s.edge_mean.transpose()).array().rowwise() / s.edge_std.transpose().array()).matrix();
    return f;
}

namespace {
std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd read_vec(const nlohmann::json& doc, const char* key, int size, const std::string& path) {
    if (!doc.contains(key) || !doc.at(key).is_array() || doc.at(key).size() != static_cast<std::size_t>(size))
        throw SchemaError(path + "." + key + ": expected an array of " + std::to_string(size) + " numbers");
    const auto xs = doc.at(key).get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(xs.data(), size);
}
} // namespace

nlohmann::ordered_json to_json(const Standardizer& s) {
    return {{"enabled", s.enabled},
            {"node_mean", vec(s.node_mean)},
            {"node_std", vec(s.node_std)},
            {"edge_mean", vec(s.edge_mean)},
            {"edge_std", vec(s.edge_std)}};
}

Standardizer standardizer_from_json(const nlohmann::json& doc, const std::string& path) {
    if (!doc.is_object() || !doc.contains("enabled") || !doc.at("enabled").is_boolean())
        throw SchemaError(path + ".enabled: expected a boolean");
    Standardizer s;
    s.enabled = doc.at("enabled").get<bool>();
    s.node_mean = read_vec(doc, "node_mean", kNodeFeatureCount, path);
    s.node_std = read_vec(doc, "node_std", kNodeFeatureCount, path);
    s.edge_mean = read_vec(doc, "edge_mean", kEdgeFeatureCount, path);
    s.edge_std = read_vec(doc, "edge_std", kEdgeFeatureCount, path);
    return s;
}

} // namespace gridwarm
