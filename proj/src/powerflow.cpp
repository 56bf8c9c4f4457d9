#include "gridwarm/powerflow.hpp"

#include "gridwarm/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <Eigen/SparseLU>

namespace gridwarm {

using cd = std::complex<double>;

std::vector<double> VoltageState::interleaved() const {
    std::vector<double> xs(2 * size());
    for (std::size_t i = 0; i < size(); ++i) {
        xs[2 * i] = v_real[i];
        xs[2 * i + 1] = v_imag[i];
    }
    return xs;
}

VoltageState VoltageState::from_interleaved(const std::vector<double>& xs) {
    VoltageState v(xs.size() / 2);
    for (std::size_t i = 0; i < v.size(); ++i) {
        v.v_real[i] = xs[2 * i];
        v.v_imag[i] = xs[2 * i + 1];
    }
    return v;
}

nlohmann::ordered_json to_json(const VoltageState& v) {
    return {{"v_real", v.v_real}, {"v_imag", v.v_imag}};
}

VoltageState voltage_from_json(const nlohmann::json& doc, const std::string& path) {
    if (!doc.is_object() || !doc.contains("v_real") || !doc.contains("v_imag"))
        throw SchemaError(path + ": expected {v_real, v_imag}");
    VoltageState v;
    try {
        v.v_real = doc.at("v_real").get<std::vector<double>>();
        v.v_imag = doc.at("v_imag").get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(path + ": v_real/v_imag must be number arrays");
    }
    if (v.v_real.size() != v.v_imag.size())
        throw SchemaError(path + ": v_real and v_imag differ in length");
    return v;
}

const char* to_string(SolveStatus s) {
    switch (s) {
    case SolveStatus::converged:
        return "converged";
    case SolveStatus::max_iterations:
        return "max_iterations";
    case SolveStatus::singular_jacobian:
        return "singular_jacobian";
    case SolveStatus::non_finite:
        return "non_finite";
    }
    return "unknown";
}

nlohmann::ordered_json to_json(const SolveReport& r) {
    return {{"converged", r.converged},
            {"iterations", r.iterations},
            {"max_mismatch", r.max_mismatch},
            {"wall_time", r.wall_time},
            {"status", to_string(r.status)}};
}

BranchStamp branch_stamp(const Branch& br) {
    const cd ys = 1.0 / cd(br.r, br.x);
    const cd ych(0.0, br.b_charging / 2.0);
    const cd tap = std::polar(br.tap_ratio, br.phase_shift);
    BranchStamp s;
    s.tt = ys + ych;
    s.ff = s.tt / (br.tap_ratio * br.tap_ratio);
    s.ft = -ys / std::conj(tap);
    s.tf = -ys / tap;
    return s;
}

YBus build_ybus(const GridCase& grid) {
    const auto n = static_cast<Eigen::Index>(grid.buses.size());
    std::unordered_map<int, Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
        idx[grid.buses[static_cast<std::size_t>(i)].id] = i;

    std::vector<Eigen::Triplet<cd>> trips;
    trips.reserve(grid.branches.size() * 4 + grid.buses.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = grid.buses[static_cast<std::size_t>(i)];
        trips.emplace_back(i, i, cd(b.shunt_g, b.shunt_b));
    }
    for (const auto& br : grid.branches) {
        if (!br.in_service)
            continue;
        const auto f = idx.at(br.from_bus);
        const auto t = idx.at(br.to_bus);
        const auto s = branch_stamp(br);
        trips.emplace_back(f, f, s.ff);
        trips.emplace_back(f, t, s.ft);
        trips.emplace_back(t, f, s.tf);
        trips.emplace_back(t, t, s.tt);
    }
    YBus y(n, n);
    y.setFromTriplets(trips.begin(), trips.end());
    return y;
}

namespace {

// First in-service generator setpoint at each bus, if any.
std::vector<std::optional<double>> voltage_targets(const GridCase& grid) {
    std::vector<std::optional<double>> target(grid.buses.size());
    std::unordered_map<int, std::size_t> idx;
    for (std::size_t i = 0; i < grid.buses.size(); ++i)
        idx[grid.buses[i].id] = i;
    for (const auto& g : grid.generators) {
        if (!g.in_service)
            continue;
        auto& t = target[idx.at(g.bus)];
        if (!t)
            t = g.v_set;
    }
    return target;
}

std::unordered_map<int, std::size_t> bus_positions(const GridCase& grid) {
    std::unordered_map<int, std::size_t> idx;
    for (std::size_t i = 0; i < grid.buses.size(); ++i)
        idx[grid.buses[i].id] = i;
    return idx;
}

} // namespace

std::vector<int> generator_count(const GridCase& grid) {
    std::vector<int> count(grid.buses.size(), 0);
    const auto idx = bus_positions(grid);
    for (const auto& g : grid.generators)
        if (g.in_service)
            ++count[idx.at(g.bus)];
    return count;
}

std::complex<double> slack_voltage(const GridCase& grid) {
    const auto s = grid.slack_index();
    const auto target = voltage_targets(grid)[s];
    const auto& bus = grid.buses[s];
    return std::polar(target.value_or(bus.v_mag_init), bus.v_ang_init);
}

VoltageState flat_start(const GridCase& grid) {
    VoltageState v(grid.buses.size());
    const auto target = voltage_targets(grid);
    for (std::size_t i = 0; i < grid.buses.size(); ++i) {
        double mag = 1.0;
        if (grid.buses[i].kind != BusKind::pq)
            mag = target[i].value_or(grid.buses[i].v_mag_init);
        v.v_real[i] = mag;
    }
    return v;
}

std::vector<std::complex<double>> scheduled_injection(const GridCase& grid) {
    std::vector<cd> s(grid.buses.size(), cd(0.0, 0.0));
    const auto idx = bus_positions(grid);
    for (const auto& g : grid.generators)
        if (g.in_service)
            s[idx.at(g.bus)] += cd(g.p_set, 0.0);
    for (const auto& l : grid.loads)
        if (l.in_service)
            s[idx.at(l.bus)] -= cd(l.p, l.q);
    return s;
}

std::vector<BusInjection> compute_injections(const GridCase& grid, const VoltageState& v) {
    if (v.size() != grid.buses.size())
        throw Error("voltage state length does not match bus count");
    const auto y = build_ybus(grid);
    Eigen::VectorXcd vv(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
        vv[static_cast<Eigen::Index>(i)] = v.at(i);
    const Eigen::VectorXcd current = y * vv;
    std::vector<BusInjection> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const cd ii = current[static_cast<Eigen::Index>(i)];
        const cd s = v.at(i) * std::conj(ii);
        out[i] = {s.real(), s.imag(), ii.real(), ii.imag(), grid.buses[i].shunt_b * std::norm(v.at(i))};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Newton-Raphson

namespace {

enum class Role { slack, pv, pq };

struct NrProblem {
    const GridCase& grid;
    YBus y;
    std::vector<Role> role;
    std::vector<double> v_target;       // PV buses
    std::vector<cd> s_spec;
    std::vector<Eigen::Index> var;      // first unknown of each non-slack bus, -1 for slack
    Eigen::Index n_var = 0;
    std::size_t slack = 0;

    explicit NrProblem(const GridCase& g) : grid(g), y(build_ybus(g)) {
        const auto n = g.buses.size();
        slack = g.slack_index();
        const auto target = voltage_targets(g);
        role.assign(n, Role::pq);
        v_target.assign(n, 0.0);
        s_spec = scheduled_injection(g);
        var.assign(n, -1);
        for (std::size_t i = 0; i < n; ++i) {
            if (i == slack) {
                role[i] = Role::slack;
                continue;
            }
            if (g.buses[i].kind == BusKind::pv && target[i]) {
                role[i] = Role::pv;
                v_target[i] = *target[i];
            }
            var[i] = n_var;
            n_var += 2;
        }
    }

    Eigen::VectorXcd currents(const Eigen::VectorXcd& v) const { return y * v; }

    // Convergence measure: P/Q mismatch on PQ buses, P mismatch and |v|^2
    // residual on PV buses.
    Eigen::VectorXd power_mismatch(const Eigen::VectorXcd& v, const Eigen::VectorXcd& cur) const {
        Eigen::VectorXd f(n_var);
        for (std::size_t i = 0; i < role.size(); ++i) {
            if (role[i] == Role::slack)
                continue;
            const auto k = var[i];
            const auto ii = static_cast<Eigen::Index>(i);
            const cd s = v[ii] * std::conj(cur[ii]);
            f[k] = s_spec[i].real() - s.real();
            if (role[i] == Role::pv)
                f[k + 1] = v_target[i] * v_target[i] - std::norm(v[ii]);
            else
                f[k + 1] = s_spec[i].imag() - s.imag();
        }
        return f;
    }

    // Newton residual: current mismatch conj(S/v) - (Yv) on PQ buses, power
    // rows on PV buses. PQ rows are linear in v when the bus injects nothing.
    Eigen::VectorXd newton_residual(const Eigen::VectorXcd& v, const Eigen::VectorXcd& cur) const {
        Eigen::VectorXd f = power_mismatch(v, cur);
        for (std::size_t i = 0; i < role.size(); ++i) {
            if (role[i] != Role::pq)
                continue;
            const auto k = var[i];
            const auto ii = static_cast<Eigen::Index>(i);
            const cd mis = std::conj(s_spec[i] / v[ii]) - cur[ii];
            f[k] = mis.real();
            f[k + 1] = mis.imag();
        }
        return f;
    }

    // Derivative of the "calculated" side of newton_residual, so the Newton
    // step solves J dx = residual.
    Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXcd& v, const Eigen::VectorXcd& cur) const {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<std::size_t>(y.nonZeros()) * 4);
        for (Eigen::Index col = 0; col < y.outerSize(); ++col) {
            const auto k = static_cast<std::size_t>(col);
            for (YBus::InnerIterator it(y, col); it; ++it) {
                const auto i = static_cast<std::size_t>(it.row());
                if (role[i] == Role::slack || role[k] == Role::slack)
                    continue;
                const double g = it.value().real();
                const double b = it.value().imag();
                const auto r = var[i];
                const auto c = var[k];
                if (role[i] == Role::pq) {
                    // d(Yv)_i / d(e_k, f_k)
                    double di_re_de = g, di_re_df = -b, di_im_de = b, di_im_df = g;
                    if (i == k) {
                        // minus d conj(S/v) / d(e, f): conj(S)/conj(v) has
                        // derivative -c/conj(v)^2 in e and j c/conj(v)^2 in f.
                        const cd c_over = std::conj(s_spec[i]) / (std::conj(v[it.row()]) * std::conj(v[it.row()]));
                        const cd d_de = -c_over;
                        const cd d_df = cd(0.0, 1.0) * c_over;
                        di_re_de -= d_de.real();
                        di_im_de -= d_de.imag();
                        di_re_df -= d_df.real();
                        di_im_df -= d_df.imag();
                    }
                    trips.emplace_back(r, c, di_re_de);
                    trips.emplace_back(r, c + 1, di_re_df);
                    trips.emplace_back(r + 1, c, di_im_de);
                    trips.emplace_back(r + 1, c + 1, di_im_df);
                    continue;
                }
                const double e = v[it.row()].real();
                const double fi = v[it.row()].imag();
                double dp_de = e * g + fi * b;
                double dp_df = fi * g - e * b;
                if (i == k) {
                    dp_de += cur[it.row()].real();
                    dp_df += cur[it.row()].imag();
                    trips.emplace_back(r + 1, c, 2.0 * e);
                    trips.emplace_back(r + 1, c + 1, 2.0 * fi);
                }
                trips.emplace_back(r, c, dp_de);
                trips.emplace_back(r, c + 1, dp_df);
            }
        }
        Eigen::SparseMatrix<double> j(n_var, n_var);
        j.setFromTriplets(trips.begin(), trips.end());
        return j;
    }

    // Switches PV buses whose generator reactive output leaves its limits to
    // PQ with Q pinned at the violated limit. Returns true if any bus switched.
    bool enforce_q_limits(const Eigen::VectorXcd& v, const Eigen::VectorXcd& cur) {
        const auto idx = bus_positions(grid);
        std::vector<double> qmax(role.size(), 0.0), qmin(role.size(), 0.0);
        for (const auto& g : grid.generators) {
            if (!g.in_service)
                continue;
            qmax[idx.at(g.bus)] += g.q_max;
            qmin[idx.at(g.bus)] += g.q_min;
        }
        bool changed = false;
        for (std::size_t i = 0; i < role.size(); ++i) {
            if (role[i] != Role::pv)
                continue;
            const auto ii = static_cast<Eigen::Index>(i);
            const double q_net = (v[ii] * std::conj(cur[ii])).imag();
            const double q_gen = q_net - s_spec[i].imag();
            double pinned = q_gen;
            if (q_gen > qmax[i])
                pinned = qmax[i];
            else if (q_gen < qmin[i])
                pinned = qmin[i];
            else
                continue;
            role[i] = Role::pq;
            s_spec[i] = cd(s_spec[i].real(), s_spec[i].imag() + pinned);
            changed = true;
        }
        return changed;
    }
};

Eigen::VectorXcd to_complex(const VoltageState& v) {
    Eigen::VectorXcd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = v.at(i);
    return out;
}

} // namespace

double max_mismatch(const GridCase& grid, const VoltageState& v) {
    NrProblem prob(grid);
    auto vv = to_complex(v);
    vv[static_cast<Eigen::Index>(prob.slack)] = slack_voltage(grid);
    const auto f = prob.power_mismatch(vv, prob.currents(vv));
    return f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
}

SolveResult solve_nr(const GridCase& grid, const VoltageState& init, const SolveOptions& opts) {
    if (init.size() != grid.buses.size())
        throw Error("initial state has " + std::to_string(init.size()) + " buses, case has " +
                    std::to_string(grid.buses.size()));
    if (!(opts.tol > 0) || opts.max_iter < 1 || !(opts.damping > 0 && opts.damping <= 1))
        throw Error("invalid solve options");

    const auto t0 = std::chrono::steady_clock::now();
    NrProblem prob(grid);
    Eigen::VectorXcd v = to_complex(init);
    v[static_cast<Eigen::Index>(prob.slack)] = slack_voltage(grid);

    SolveReport report;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    bool pattern_ready = false;
    int switches_left = opts.enforce_q_limits ? 10 : 0;

    while (true) {
        const Eigen::VectorXcd cur = prob.currents(v);
        const Eigen::VectorXd mis = prob.power_mismatch(v, cur);
        report.max_mismatch = mis.size() ? mis.cwiseAbs().maxCoeff() : 0.0;
        if (!std::isfinite(report.max_mismatch)) {
            report.status = SolveStatus::non_finite;
            break;
        }
        if (report.max_mismatch <= opts.tol) {
            if (switches_left > 0 && prob.enforce_q_limits(v, cur)) {
                --switches_left;
                pattern_ready = false;
                continue;
            }
            report.converged = true;
            report.status = SolveStatus::converged;
            break;
        }
        if (report.iterations >= opts.max_iter) {
            report.status = SolveStatus::max_iterations;
            break;
        }
        const Eigen::VectorXd f = prob.newton_residual(v, cur);
        if (!f.allFinite()) {
            report.status = SolveStatus::non_finite;
            break;
        }
        const auto jac = prob.jacobian(v, cur);
        if (!pattern_ready) {
            lu.analyzePattern(jac);
            pattern_ready = true;
        }
        lu.factorize(jac);
        if (lu.info() != Eigen::Success) {
            report.status = SolveStatus::singular_jacobian;
            break;
        }
        const Eigen::VectorXd dx = lu.solve(f);
        if (lu.info() != Eigen::Success || !dx.allFinite()) {
            report.status = SolveStatus::singular_jacobian;
            break;
        }
        for (std::size_t i = 0; i < prob.role.size(); ++i) {
            if (prob.role[i] == Role::slack)
                continue;
            const auto k = prob.var[i];
            v[static_cast<Eigen::Index>(i)] += opts.damping * cd(dx[k], dx[k + 1]);
        }
        ++report.iterations;
    }

    SolveResult out;
    out.state = VoltageState(grid.buses.size());
    for (std::size_t i = 0; i < grid.buses.size(); ++i)
        out.state.set(i, v[static_cast<Eigen::Index>(i)]);
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.report = report;
    return out;
}

// ---------------------------------------------------------------------------
// Droop redispatch

GridCase apply_droop_redispatch(const GridCase& grid, double delta_p_total, std::vector<Diagnostic>* warnings) {
    GridCase out = grid;
    if (delta_p_total == 0.0)
        return out;

    std::vector<std::size_t> free;
    for (std::size_t g = 0; g < out.generators.size(); ++g)
        if (out.generators[g].in_service && out.generators[g].participation > 0)
            free.push_back(g);
    if (free.empty()) {
        if (warnings)
            warnings->push_back({"droop_no_participants", "no in-service generator with positive participation"});
        return out;
    }

    double remaining = delta_p_total;
    while (std::abs(remaining) >= 1e-9 && !free.empty()) {
        double total = 0.0;
        for (auto g : free)
            total += out.generators[g].participation;
        const double share = remaining;
        remaining = 0.0;
        std::vector<std::size_t> still_free;
        for (auto g : free) {
            auto& gen = out.generators[g];
            const double want = gen.p_set + share * gen.participation / total;
            const double got = std::clamp(want, gen.p_min, gen.p_max);
            remaining += want - got;
            gen.p_set = got;
            const bool can_move = share > 0 ? got < gen.p_max : got > gen.p_min;
            if (can_move)
                still_free.push_back(g);
        }
        free = std::move(still_free);
    }
    if (std::abs(remaining) >= 1e-9 && warnings)
        warnings->push_back({"droop_saturated", "all participating generators at limits; " + std::to_string(remaining) +
                                                    " p.u. left for the slack bus"});
    return out;
}

} // namespace gridwarm
