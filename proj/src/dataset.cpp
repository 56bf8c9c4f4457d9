#include "gridwarm/dataset.hpp"

#include "gridwarm/error.hpp"
#include "gridwarm/grid_io.hpp"

#include <fstream>
#include <sstream>

namespace gridwarm {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kManifestFormat = "gridwarm-dataset";

template <class F>
auto schema(const std::string& path, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

ordered_json matrix_json(const Eigen::MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

ordered_json case_delta(const GridCase& base, const GridCase& grid) {
    if (grid.loads.size() != base.loads.size() || grid.branches.size() != base.branches.size() ||
        grid.generators.size() != base.generators.size())
        throw Error("case cannot be stored as a delta: element counts differ from the base case");
    ordered_json loads = ordered_json::array();
    for (std::size_t i = 0; i < grid.loads.size(); ++i) {
        const auto& a = base.loads[i];
        const auto& b = grid.loads[i];
        if (a.p != b.p || a.q != b.q || a.in_service != b.in_service)
            loads.push_back({i, b.p, b.q, b.in_service});
    }
    ordered_json disabled = ordered_json::array();
    for (std::size_t i = 0; i < grid.branches.size(); ++i)
        if (base.branches[i].in_service && !grid.branches[i].in_service)
            disabled.push_back(i);
    ordered_json gens = ordered_json::array();
    for (std::size_t i = 0; i < grid.generators.size(); ++i)
        if (base.generators[i].p_set != grid.generators[i].p_set)
            gens.push_back({i, grid.generators[i].p_set});
    ordered_json delta = {{"loads", loads}, {"disabled_branches", disabled}, {"generators", gens}};
    if (!(apply_case_delta(base, delta) == grid))
        throw Error("case differs from the base case beyond loads, branch outages and generator setpoints");
    return delta;
}

GridCase apply_case_delta(const GridCase& base, const json& delta, const std::string& path) {
    GridCase out = base;
    schema(path, [&] {
        for (const auto& l : delta.at("loads")) {
            const auto i = l.at(0).get<std::size_t>();
            if (i >= out.loads.size())
                throw SchemaError(path + ".loads: index " + std::to_string(i) + " out of range");
            out.loads[i].p = l.at(1).get<double>();
            out.loads[i].q = l.at(2).get<double>();
            out.loads[i].in_service = l.at(3).get<bool>();
        }
        for (const auto& b : delta.at("disabled_branches")) {
            const auto i = b.get<std::size_t>();
            if (i >= out.branches.size())
                throw SchemaError(path + ".disabled_branches: index " + std::to_string(i) + " out of range");
            out.branches[i].in_service = false;
        }
        for (const auto& g : delta.at("generators")) {
            const auto i = g.at(0).get<std::size_t>();
            if (i >= out.generators.size())
                throw SchemaError(path + ".generators: index " + std::to_string(i) + " out of range");
            out.generators[i].p_set = g.at(1).get<double>();
        }
        return 0;
    });
    return out;
}

ordered_json sample_to_json(const GridCase& base, const Sample& s) {
    const auto f = extract_features(s);
    ordered_json edges = ordered_json::array();
    for (const auto& e : f.edges)
        edges.push_back({e.from, e.to, e.branch});
    return {{"id", s.id},
            {"meta",
             {{"seed", s.meta.seed},
              {"converged", s.meta.converged},
              {"pre_iterations", s.meta.pre_iterations},
              {"label_iterations", s.meta.label_iterations},
              {"discarded_draws", s.meta.discarded_draws}}},
            {"contingency", to_json(s.contingency)},
            {"pre_case", case_delta(base, s.pre_case)},
            {"post_case", case_delta(base, s.post_case)},
            {"pre_solution", to_json(s.pre_solution)},
            {"label", to_json(s.label)},
            {"features",
             {{"node", matrix_json(f.node)},
              {"edge", matrix_json(f.edge)},
              {"edges", edges},
              {"zero_injection", f.zero_injection}}}};
}

Sample sample_from_json(const GridCase& base, const json& doc, const std::string& path) {
    Sample s;
    schema(path, [&] {
        s.id = doc.at("id").get<int>();
        const auto& m = doc.at("meta");
        s.meta.seed = m.at("seed").get<std::uint64_t>();
        s.meta.converged = m.at("converged").get<bool>();
        s.meta.pre_iterations = m.at("pre_iterations").get<int>();
        s.meta.label_iterations = m.at("label_iterations").get<int>();
        s.meta.discarded_draws = m.at("discarded_draws").get<int>();
        return 0;
    });
    auto field = [&](const char* key) -> const json& {
        if (!doc.contains(key))
            throw SchemaError(path + "." + key + ": missing");
        return doc.at(key);
    };
    s.contingency = contingency_from_json(field("contingency"), path + ".contingency");
    s.pre_case = apply_case_delta(base, field("pre_case"), path + ".pre_case");
    s.post_case = apply_case_delta(base, field("post_case"), path + ".post_case");
    s.pre_solution = voltage_from_json(field("pre_solution"), path + ".pre_solution");
    s.label = voltage_from_json(field("label"), path + ".label");
    if (s.pre_solution.size() != base.buses.size() || s.label.size() != base.buses.size())
        throw SchemaError(path + ": voltage length does not match the base case bus count");
    return s;
}

ordered_json manifest_to_json(const DatasetManifest& m, const json& config) {
    ordered_json diags = ordered_json::array();
    for (const auto& d : m.diagnostics)
        diags.push_back({{"code", d.code}, {"message", d.message}});
    ordered_json out = {{"format", kManifestFormat},
                        {"version", kDatasetFormatVersion},
                        {"code_version", GRIDWARM_VERSION},
                        {"spec", to_json(m.spec)},
                        {"stats",
                         {{"accepted", m.stats.accepted},
                          {"discarded", m.stats.discarded},
                          {"attempts", m.stats.attempts}}},
                        {"diagnostics", diags},
                        {"config", config},
                        {"base", to_json(m.base)}};
    return out;
}

DatasetManifest manifest_from_json(const json& doc) {
    if (!doc.is_object() || doc.value("format", "") != kManifestFormat)
        throw SchemaError("$.format: expected \"" + std::string(kManifestFormat) + "\"");
    if (doc.value("version", -1) != kDatasetFormatVersion)
        throw SchemaError("$.version: unsupported dataset version " + doc.value("version", json()).dump());
    DatasetManifest m;
    if (!doc.contains("base") || !doc.contains("spec"))
        throw SchemaError("$: manifest needs base and spec");
    m.base = grid_from_json(doc.at("base"), "$.base");
    require_valid(m.base);
    m.spec = gen_spec_from_json(doc.at("spec"), "$.spec");
    schema("$.stats", [&] {
        const auto& st = doc.at("stats");
        m.stats = {st.at("accepted").get<int>(), st.at("discarded").get<int>(), st.at("attempts").get<int>()};
        for (const auto& d : doc.at("diagnostics"))
            m.diagnostics.push_back({d.at("code").get<std::string>(), d.at("message").get<std::string>()});
        return 0;
    });
    return m;
}

ordered_json split_to_json(const SplitIndices& split, const std::array<double, 3>& ratios, std::uint64_t seed) {
    return {{"ratios", ratios}, {"seed", seed}, {"train", split.train}, {"val", split.val}, {"test", split.test}};
}

SplitIndices split_from_json(const json& doc) {
    return schema("$", [&] {
        SplitIndices s;
        s.train = doc.at("train").get<std::vector<std::size_t>>();
        s.val = doc.at("val").get<std::vector<std::size_t>>();
        s.test = doc.at("test").get<std::vector<std::size_t>>();
        return s;
    });
}

void write_dataset(const fs::path& dir, const Dataset& ds, const SplitIndices& split,
                   const std::array<double, 3>& ratios, std::uint64_t split_seed, const json& config) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError(dir.string() + ": cannot create directory: " + ec.message());
    write_text_file((dir / "manifest.json").string(), manifest_to_json(ds.manifest, config).dump(1) + "\n");
    std::string lines;
    for (const auto& s : ds.samples)
        lines += sample_to_json(ds.manifest.base, s).dump() + "\n";
    write_text_file((dir / "samples.jsonl").string(), lines);
    write_text_file((dir / "split.json").string(), split_to_json(split, ratios, split_seed).dump(1) + "\n");
}

DatasetFiles read_dataset(const fs::path& dir) {
    auto parse = [](const fs::path& p) {
        const auto text = read_text_file(p.string());
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw SchemaError(p.string() + ": " + e.what());
        }
    };
    DatasetFiles out;
    const auto manifest_path = dir / "manifest.json";
    try {
        out.dataset.manifest = manifest_from_json(parse(manifest_path));
    } catch (const SchemaError& e) {
        throw SchemaError(manifest_path.string() + ": " + e.what());
    }

    const auto samples_path = dir / "samples.jsonl";
    std::istringstream lines(read_text_file(samples_path.string()));
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const std::string where = samples_path.string() + ":" + std::to_string(lineno);
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError(where + ": " + e.what());
        }
        out.dataset.samples.push_back(sample_from_json(out.dataset.manifest.base, doc, where));
    }

    const auto split_path = dir / "split.json";
    if (fs::exists(split_path)) {
        out.split = split_from_json(parse(split_path));
        const auto n = out.dataset.samples.size();
        for (const auto* part : {&out.split.train, &out.split.val, &out.split.test})
            for (auto i : *part)
                if (i >= n)
                    throw SchemaError(split_path.string() + ": index " + std::to_string(i) + " out of range");
    } else {
        for (std::size_t i = 0; i < out.dataset.samples.size(); ++i)
            out.split.test.push_back(i);
    }
    return out;
}

std::vector<Sample> select_samples(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (auto i : idx)
        out.push_back(samples.at(i));
    return out;
}

} // namespace gridwarm
