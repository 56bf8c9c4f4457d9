#include "gridwarm/grid.hpp"

#include "gridwarm/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <unordered_map>

namespace gridwarm {

const char* to_string(BusKind kind) {
    switch (kind) {
    case BusKind::slack:
        return "slack";
    case BusKind::pv:
        return "pv";
    case BusKind::pq:
        return "pq";
    }
    return "pq";
}

std::optional<BusKind> bus_kind_from_string(const std::string& s) {
    if (s == "slack")
        return BusKind::slack;
    if (s == "pv")
        return BusKind::pv;
    if (s == "pq")
        return BusKind::pq;
    return std::nullopt;
}

std::optional<std::size_t> GridCase::bus_index(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].id == id)
            return i;
    return std::nullopt;
}

std::size_t GridCase::slack_index() const {
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].kind != BusKind::slack)
            continue;
        if (found)
            throw ValidationError("more than one slack bus");
        found = i;
    }
    if (!found)
        throw ValidationError("no slack bus");
    return *found;
}

namespace {

std::unordered_map<int, std::size_t> index_by_id(const GridCase& grid) {
    std::unordered_map<int, std::size_t> idx;
    for (std::size_t i = 0; i < grid.buses.size(); ++i)
        idx.emplace(grid.buses[i].id, i);
    return idx;
}

// In-service adjacency as (neighbor, branch index) pairs. Branches with
// unknown endpoints are skipped; validate() reports them separately.
std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency(const GridCase& grid) {
    const auto idx = index_by_id(grid);
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(grid.buses.size());
    for (std::size_t k = 0; k < grid.branches.size(); ++k) {
        const auto& br = grid.branches[k];
        if (!br.in_service)
            continue;
        auto f = idx.find(br.from_bus);
        auto t = idx.find(br.to_bus);
        if (f == idx.end() || t == idx.end())
            continue;
        adj[f->second].emplace_back(t->second, k);
        adj[t->second].emplace_back(f->second, k);
    }
    return adj;
}

bool finite_all(std::initializer_list<double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

} // namespace

std::vector<bool> reachable_from(const GridCase& grid, std::size_t start) {
    const auto adj = adjacency(grid);
    std::vector<bool> seen(grid.buses.size(), false);
    if (start >= seen.size())
        return seen;
    std::vector<std::size_t> stack{start};
    seen[start] = true;
    while (!stack.empty()) {
        auto u = stack.back();
        stack.pop_back();
        for (auto [v, k] : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                stack.push_back(v);
            }
        }
    }
    return seen;
}

std::vector<bool> bridge_branches(const GridCase& grid) {
    // Tarjan low-link over the multigraph; parallel branches are never bridges
    // because the parent edge is skipped by branch index, not by neighbor.
    const auto adj = adjacency(grid);
    const std::size_t n = grid.buses.size();
    std::vector<bool> bridge(grid.branches.size(), false);
    std::vector<int> disc(n, -1), low(n, 0);
    int timer = 0;

    struct Frame {
        std::size_t node;
        std::size_t parent_branch;
        std::size_t next;
    };
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    for (std::size_t root = 0; root < n; ++root) {
        if (disc[root] >= 0)
            continue;
        std::vector<Frame> stack{{root, none, 0}};
        disc[root] = low[root] = timer++;
        while (!stack.empty()) {
            auto& fr = stack.back();
            if (fr.next < adj[fr.node].size()) {
                auto [v, k] = adj[fr.node][fr.next++];
                if (k == fr.parent_branch)
                    continue;
                if (disc[v] < 0) {
                    disc[v] = low[v] = timer++;
                    stack.push_back({v, k, 0});
                } else {
                    low[fr.node] = std::min(low[fr.node], disc[v]);
                }
            } else {
                Frame done = fr;
                stack.pop_back();
                if (!stack.empty()) {
                    auto& parent = stack.back();
                    low[parent.node] = std::min(low[parent.node], low[done.node]);
                    if (low[done.node] > disc[parent.node])
                        bridge[done.parent_branch] = true;
                }
            }
        }
    }
    return bridge;
}

std::vector<Diagnostic> validate(const GridCase& grid) {
    std::vector<Diagnostic> out;
    auto add = [&](const char* code, std::string msg) { out.push_back({code, std::move(msg)}); };

    if (!(grid.base_mva > 0) || !std::isfinite(grid.base_mva))
        add("base_mva", cat("base_mva must be positive, got ", grid.base_mva));

    std::set<int> ids;
    std::size_t slack_count = 0;
    for (std::size_t i = 0; i < grid.buses.size(); ++i) {
        const auto& b = grid.buses[i];
        if (!ids.insert(b.id).second)
            add("duplicate_bus", cat("duplicate bus id ", b.id));
        if (b.kind == BusKind::slack)
            ++slack_count;
        if (!(b.v_mag_init > 0))
            add("bus_voltage", cat("bus ", b.id, ": v_mag_init must be positive"));
        if (!finite_all({b.v_mag_init, b.v_ang_init, b.shunt_g, b.shunt_b}))
            add("non_finite", cat("bus ", b.id, ": non-finite value"));
    }
    if (slack_count != 1)
        add("slack_count", cat("expected exactly one slack bus, found ", slack_count));

    for (std::size_t k = 0; k < grid.branches.size(); ++k) {
        const auto& br = grid.branches[k];
        const auto label = cat("branch ", k, " (", br.from_bus, "-", br.to_bus, ")");
        if (!ids.count(br.from_bus) || !ids.count(br.to_bus))
            add("branch_endpoint", label + ": references a nonexistent bus");
        if (!(br.r * br.r + br.x * br.x > 0))
            add("branch_impedance", label + ": zero series impedance");
        if (!(br.tap_ratio > 0))
            add("branch_tap", label + ": tap_ratio must be positive");
        if (br.from_bus == br.to_bus)
            add("branch_loop", label + ": both ends on the same bus");
        if (!finite_all({br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift}))
            add("non_finite", label + ": non-finite value");
    }

    for (std::size_t g = 0; g < grid.generators.size(); ++g) {
        const auto& gen = grid.generators[g];
        const auto label = cat("generator ", g, " at bus ", gen.bus);
        if (!ids.count(gen.bus))
            add("generator_bus", label + ": references a nonexistent bus");
        if (!(gen.p_min <= gen.p_set && gen.p_set <= gen.p_max))
            add("generator_limits", label + ": p_set outside [p_min, p_max]");
        if (!(gen.participation >= 0))
            add("generator_participation", label + ": negative participation");
        if (!(gen.v_set > 0))
            add("generator_voltage", label + ": v_set must be positive");
        if (!finite_all({gen.p_set, gen.v_set, gen.p_max, gen.p_min, gen.participation}))
            add("non_finite", label + ": non-finite value");
    }

    for (std::size_t l = 0; l < grid.loads.size(); ++l) {
        const auto& load = grid.loads[l];
        if (!ids.count(load.bus))
            add("load_bus", cat("load ", l, " at bus ", load.bus, ": references a nonexistent bus"));
        if (!finite_all({load.p, load.q}))
            add("non_finite", cat("load ", l, ": non-finite value"));
    }

    if (slack_count == 1) {
        const auto seen = reachable_from(grid, grid.slack_index());
        std::vector<int> isolated;
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (!seen[i])
                isolated.push_back(grid.buses[i].id);
        if (!isolated.empty()) {
            std::ostringstream os;
            os << isolated.size() << " bus(es) not connected to the slack bus:";
            for (std::size_t i = 0; i < std::min<std::size_t>(isolated.size(), 10); ++i)
                os << ' ' << isolated[i];
            if (isolated.size() > 10)
                os << " ...";
            add("connectivity", os.str());
        }
    }
    return out;
}

void require_valid(const GridCase& grid) {
    const auto diags = validate(grid);
    if (diags.empty())
        return;
    std::string msg = "invalid case:";
    for (const auto& d : diags)
        msg += "\n  [" + d.code + "] " + d.message;
    throw ValidationError(msg);
}

} // namespace gridwarm
