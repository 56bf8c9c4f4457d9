#pragma once

#include "gridwarm/grid.hpp"

#include <complex>
#include <string>
#include <vector>

#include <Eigen/SparseCore>
#include <json.hpp>

namespace gridwarm {

/// Rectangular bus voltages, indexed by bus position in GridCase::buses.
struct VoltageState {
    std::vector<double> v_real;
    std::vector<double> v_imag;

    VoltageState() = default;
    explicit VoltageState(std::size_t n) : v_real(n, 0.0), v_imag(n, 0.0) {}

    std::size_t size() const { return v_real.size(); }
    std::complex<double> at(std::size_t i) const { return {v_real[i], v_imag[i]}; }
    void set(std::size_t i, std::complex<double> v) {
        v_real[i] = v.real();
        v_imag[i] = v.imag();
    }
    /// Bus-major interleaved [re_0, im_0, re_1, im_1, ...].
    std::vector<double> interleaved() const;
    static VoltageState from_interleaved(const std::vector<double>& xs);

    bool operator==(const VoltageState&) const = default;
};

nlohmann::ordered_json to_json(const VoltageState& v);
VoltageState voltage_from_json(const nlohmann::json& doc, const std::string& path = "$");

using YBus = Eigen::SparseMatrix<std::complex<double>>;

struct BranchStamp {
    std::complex<double> ff, ft, tf, tt;
};

/// Pi-model admittance stamp of one branch (tap on the from side).
BranchStamp branch_stamp(const Branch& br);

YBus build_ybus(const GridCase& grid);

VoltageState flat_start(const GridCase& grid);

/// Slack voltage phasor used as the fixed boundary condition of the solve.
std::complex<double> slack_voltage(const GridCase& grid);

struct SolveOptions {
    double tol = 1e-6;
    int max_iter = 100;
    bool enforce_q_limits = false;
    double damping = 1.0;
};

enum class SolveStatus { converged, max_iterations, singular_jacobian, non_finite };
const char* to_string(SolveStatus s);

struct SolveReport {
    bool converged = false;
    int iterations = 0;
    double max_mismatch = 0.0;
    double wall_time = 0.0;
    SolveStatus status = SolveStatus::max_iterations;
};

nlohmann::ordered_json to_json(const SolveReport& r);

struct SolveResult {
    VoltageState state;
    SolveReport report;
};

/// Newton-Raphson in rectangular coordinates. Unknowns are (v_real, v_imag)
/// of every non-slack bus. PQ buses contribute current-injection mismatch
/// rows, PV buses a P mismatch row and a |v|^2 = v_set^2 row. Convergence is
/// the infinity norm of the P/Q (and PV magnitude) mismatch. The slack bus is
/// held at v_set at its case angle whatever `init` says there. Never throws
/// on non-convergence.
SolveResult solve_nr(const GridCase& grid, const VoltageState& init, const SolveOptions& opts = {});

/// Max mismatch of `v` measured the same way solve_nr measures convergence.
double max_mismatch(const GridCase& grid, const VoltageState& v);

/// Shares `delta_p_total` across in-service generators in proportion to
/// participation, clamping to [p_min, p_max] and re-sharing the clamped
/// residual among generators still free to move.
GridCase apply_droop_redispatch(const GridCase& grid, double delta_p_total,
                                std::vector<Diagnostic>* warnings = nullptr);

struct BusInjection {
    double p = 0.0;
    double q = 0.0;
    double i_real = 0.0;
    double i_imag = 0.0;
    double q_shunt = 0.0;
};

std::vector<BusInjection> compute_injections(const GridCase& grid, const VoltageState& v);

/// Scheduled net injection (generation minus load) per bus position.
std::vector<std::complex<double>> scheduled_injection(const GridCase& grid);

/// In-service generator count per bus position.
std::vector<int> generator_count(const GridCase& grid);

} // namespace gridwarm
