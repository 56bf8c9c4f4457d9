#include "gridwarm/contingency.hpp"

#include "gridwarm/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace gridwarm {

void check_spec(const GenSpec& spec) {
    if (spec.n_samples < 0)
        throw Error("n_samples must be non-negative");
    if (!(spec.load_scale_lo > 0 && spec.load_scale_lo <= spec.load_scale_hi))
        throw Error("load scale range must satisfy 0 < lo <= hi");
    if (spec.lines_removed_min < 0 || spec.lines_removed_max < spec.lines_removed_min)
        throw Error("lines removed range must satisfy 0 <= min <= max");
    if (spec.selection.mode == LoadSelection::Mode::random_fraction &&
        !(spec.selection.fraction > 0 && spec.selection.fraction <= 1))
        throw Error("selection fraction must be in (0, 1]");
    if (spec.selection.mode == LoadSelection::Mode::top_k && spec.selection.k < 1)
        throw Error("selection top_k must be at least 1");
    if (!(spec.parameter > 0))
        throw Error("contingency parameter must be positive");
}

std::vector<int> load_buses(const GridCase& grid) {
    std::set<int> carrying;
    for (const auto& l : grid.loads)
        if (l.in_service && (l.p != 0.0 || l.q != 0.0))
            carrying.insert(l.bus);
    std::vector<int> out;
    for (const auto& b : grid.buses)
        if (carrying.count(b.id))
            out.push_back(b.id);
    return out;
}

double total_load(const GridCase& grid) {
    double total = 0.0;
    for (const auto& l : grid.loads)
        if (l.in_service)
            total += l.p;
    return total;
}

GridCase perturb_pre_case(const GridCase& base, Rng& rng, const GenSpec& spec, std::vector<Diagnostic>* diagnostics) {
    GridCase out = base;
    const double before = total_load(base);
    for (auto& l : out.loads) {
        const double s = uniform(rng, spec.load_scale_lo, spec.load_scale_hi);
        l.p *= s;
        l.q *= s;
    }

    const auto k = uniform_int(rng, spec.lines_removed_min, spec.lines_removed_max);
    int removed = 0;
    for (std::int64_t r = 0; r < k; ++r) {
        std::vector<std::size_t> candidates;
        for (std::size_t b = 0; b < out.branches.size(); ++b)
            if (out.branches[b].in_service)
                candidates.push_back(b);
        if (candidates.empty())
            break;
        const auto bridges = bridge_branches(out);
        bool done = false;
        for (int attempt = 0; attempt < 100 && !done; ++attempt) {
            const auto pick = candidates[static_cast<std::size_t>(
                uniform_int(rng, 0, static_cast<std::int64_t>(candidates.size()) - 1))];
            if (bridges[pick])
                continue;
            out.branches[pick].in_service = false;
            done = true;
        }
        if (!done)
            break;
        ++removed;
    }
    if (removed < k && diagnostics)
        diagnostics->push_back({"lines_removed", "removed " + std::to_string(removed) + " of " + std::to_string(k) +
                                                     " lines: no removable non-bridging line found"});

    return apply_droop_redispatch(out, total_load(out) - before, diagnostics);
}

Contingency make_madiot(const GridCase& grid, Rng& rng, const GenSpec& spec, std::vector<Diagnostic>* diagnostics) {
    auto buses = load_buses(grid);
    if (buses.empty())
        throw Error("case has no in-service load to manipulate");

    Contingency c;
    c.kind = ContingencyKind::madiot;
    c.parameter = spec.parameter;
    if (spec.selection.mode == LoadSelection::Mode::random_fraction) {
        const auto m = static_cast<std::size_t>(std::ceil(spec.selection.fraction * static_cast<double>(buses.size()) - 1e-12));
        // Partial Fisher-Yates: first m entries are a uniform m-subset.
        for (std::size_t i = 0; i < m; ++i) {
            const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(buses.size()) - 1));
            std::swap(buses[i], buses[j]);
        }
        buses.resize(m);
    } else {
        std::map<int, double> p_at;
        for (const auto& l : grid.loads)
            if (l.in_service)
                p_at[l.bus] += l.p;
        std::stable_sort(buses.begin(), buses.end(), [&](int a, int b) { return p_at[a] > p_at[b]; });
        auto k = static_cast<std::size_t>(spec.selection.k);
        if (k > buses.size()) {
            if (diagnostics)
                diagnostics->push_back({"top_k_clamped", "top_k " + std::to_string(k) + " exceeds " +
                                                             std::to_string(buses.size()) + " loads"});
            k = buses.size();
        }
        buses.resize(k);
    }
    // Report locations in bus order.
    std::vector<int> ordered;
    for (const auto& b : grid.buses)
        if (std::find(buses.begin(), buses.end(), b.id) != buses.end())
            ordered.push_back(b.id);
    c.locations = std::move(ordered);
    return c;
}

GridCase apply_contingency(const GridCase& grid, const Contingency& c, std::vector<Diagnostic>* diagnostics) {
    GridCase out = grid;
    double delta = 0.0;
    for (int bus : c.locations) {
        bool found = false;
        for (auto& l : out.loads) {
            if (l.bus != bus || !l.in_service)
                continue;
            found = true;
            const double p_new = l.p * c.parameter;
            delta += p_new - l.p;
            l.p = p_new;
            l.q *= c.parameter;
        }
        if (!found)
            throw Error("contingency location bus " + std::to_string(bus) + " carries no load");
    }
    return apply_droop_redispatch(out, delta, diagnostics);
}

namespace {

// One draw of the three-step process; nullopt when either solve fails.
std::optional<Sample> try_draw(const GridCase& base, const GenSpec& spec, int j, int draw,
                               std::vector<Diagnostic>* diagnostics) {
    const auto seed = derive_seed(spec.seed, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(draw));
    Rng rng(seed);
    Sample s;
    s.id = j;
    std::vector<Diagnostic> local;
    s.pre_case = perturb_pre_case(base, rng, spec, &local);
    const auto pre = solve_nr(s.pre_case, flat_start(s.pre_case), spec.solve);
    if (!pre.report.converged)
        return std::nullopt;
    s.pre_solution = pre.state;
    s.contingency = make_madiot(s.pre_case, rng, spec, &local);
    s.post_case = apply_contingency(s.pre_case, s.contingency, &local);
    const auto post = solve_nr(s.post_case, s.pre_solution, spec.solve);
    if (!post.report.converged)
        return std::nullopt;
    s.label = post.state;
    s.meta = {seed, true, pre.report.iterations, post.report.iterations, draw};
    if (diagnostics)
        for (auto& d : local)
            diagnostics->push_back({d.code, "sample " + std::to_string(j) + ": " + d.message});
    return s;
}

} // namespace

std::optional<Sample> generate_sample(const GridCase& base, const GenSpec& spec, int j, int max_draws) {
    for (int draw = 0; draw < max_draws; ++draw)
        if (auto s = try_draw(base, spec, j, draw, nullptr))
            return s;
    return std::nullopt;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&] {
            while (true) {
                const auto i = next.fetch_add(1);
                if (i >= n)
                    return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

Dataset generate_dataset(const GridCase& base, const GenSpec& spec, int jobs) {
    check_spec(spec);
    require_valid(base);
    if (load_buses(base).empty())
        throw Error("base case has no load to manipulate");

    const auto n = static_cast<std::size_t>(spec.n_samples);
    std::vector<std::optional<Sample>> slots(n);
    std::vector<std::vector<Diagnostic>> slot_diagnostics(n);
    // Discards across all samples beyond n_samples mean the overall discard
    // rate exceeds one half whatever happens to the remaining draws.
    std::atomic<int> total_discards{0};
    std::atomic<bool> aborted{false};
    parallel_for(n, jobs, [&](std::size_t j) {
        // Draw one at a time so the shared discard budget is checked between draws.
        for (int draw = 0; !aborted; ++draw) {
            if (auto s = try_draw(base, spec, static_cast<int>(j), draw, &slot_diagnostics[j])) {
                slots[j] = std::move(s);
                return;
            }
            if (total_discards.fetch_add(1) + 1 > spec.n_samples)
                aborted = true;
        }
    });
    if (aborted)
        throw NumericalError("more than half of all generation draws failed to solve; the spec is infeasible for this case");

    Dataset ds;
    ds.manifest.base = base;
    ds.manifest.spec = spec;
    for (std::size_t j = 0; j < n; ++j) {
        ds.manifest.stats.discarded += slots[j]->meta.discarded_draws;
        ds.samples.push_back(std::move(*slots[j]));
        for (auto& d : slot_diagnostics[j])
            ds.manifest.diagnostics.push_back(std::move(d));
    }
    ds.manifest.stats.accepted = static_cast<int>(ds.samples.size());
    ds.manifest.stats.attempts = ds.manifest.stats.accepted + ds.manifest.stats.discarded;
    return ds;
}

SplitIndices split_dataset(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
        throw Error("split ratios must be non-negative and sum to 1");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, 0x5917));
    shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
    SplitIndices out;
    out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const Contingency& c) {
    return {{"kind", "madiot"}, {"locations", c.locations}, {"parameter", c.parameter}};
}

Contingency contingency_from_json(const nlohmann::json& doc, const std::string& path) {
    if (!doc.is_object() || doc.value("kind", "") != "madiot")
        throw SchemaError(path + ".kind: expected \"madiot\"");
    Contingency c;
    try {
        c.locations = doc.at("locations").get<std::vector<int>>();
        c.parameter = doc.at("parameter").get<double>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(path + ": expected locations (int array) and parameter (number)");
    }
    return c;
}

nlohmann::ordered_json to_json(const GenSpec& spec) {
    nlohmann::ordered_json sel;
    if (spec.selection.mode == LoadSelection::Mode::random_fraction)
        sel = {{"mode", "random_fraction"}, {"fraction", spec.selection.fraction}};
    else
        sel = {{"mode", "top_k"}, {"k", spec.selection.k}};
    return {{"n_samples", spec.n_samples},
            {"load_scale_range", {spec.load_scale_lo, spec.load_scale_hi}},
            {"lines_removed_range", {spec.lines_removed_min, spec.lines_removed_max}},
            {"selection", sel},
            {"parameter", spec.parameter},
            {"seed", spec.seed},
            {"solve", {{"tol", spec.solve.tol}, {"max_iter", spec.solve.max_iter},
                       {"enforce_q_limits", spec.solve.enforce_q_limits}, {"damping", spec.solve.damping}}}};
}

GenSpec gen_spec_from_json(const nlohmann::json& doc, const std::string& path) {
    GenSpec s;
    try {
        s.n_samples = doc.at("n_samples").get<int>();
        s.load_scale_lo = doc.at("load_scale_range").at(0).get<double>();
        s.load_scale_hi = doc.at("load_scale_range").at(1).get<double>();
        s.lines_removed_min = doc.at("lines_removed_range").at(0).get<int>();
        s.lines_removed_max = doc.at("lines_removed_range").at(1).get<int>();
        const auto& sel = doc.at("selection");
        if (sel.at("mode").get<std::string>() == "top_k") {
            s.selection.mode = LoadSelection::Mode::top_k;
            s.selection.k = sel.at("k").get<int>();
        } else {
            s.selection.fraction = sel.at("fraction").get<double>();
        }
        s.parameter = doc.at("parameter").get<double>();
        s.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("solve")) {
            const auto& so = doc.at("solve");
            s.solve.tol = so.at("tol").get<double>();
            s.solve.max_iter = so.at("max_iter").get<int>();
            s.solve.enforce_q_limits = so.at("enforce_q_limits").get<bool>();
            s.solve.damping = so.at("damping").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": malformed generation spec (" + e.what() + ")");
    }
    return s;
}

} // namespace gridwarm
