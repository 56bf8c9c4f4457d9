#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace gridwarm {

enum class BusKind { slack, pv, pq };

const char* to_string(BusKind kind);
std::optional<BusKind> bus_kind_from_string(const std::string& s);

struct Bus {
    int id = 0;
    BusKind kind = BusKind::pq;
    double v_mag_init = 1.0;
    double v_ang_init = 0.0;  // radians
    double shunt_g = 0.0;
    double shunt_b = 0.0;

    bool operator==(const Bus&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;
    double tap_ratio = 1.0;
    double phase_shift = 0.0;  // radians
    bool in_service = true;

    bool operator==(const Branch&) const = default;
};

struct Generator {
    int bus = 0;
    double p_set = 0.0;
    double v_set = 1.0;
    double p_max = 0.0;
    double p_min = 0.0;
    double participation = 0.0;
    bool in_service = true;
    // Reactive limits; only read when Q-limit enforcement is switched on.
    double q_max = 1e10;
    double q_min = -1e10;

    bool operator==(const Generator&) const = default;
};

struct Load {
    int bus = 0;
    double p = 0.0;
    double q = 0.0;
    bool in_service = true;

    bool operator==(const Load&) const = default;
};

/// Full network description. All electrical quantities are per-unit on base_mva.
struct GridCase {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;
    std::vector<Load> loads;

    bool operator==(const GridCase&) const = default;

    std::size_t bus_count() const { return buses.size(); }
    /// Position of the bus with this id in `buses`, or nullopt.
    std::optional<std::size_t> bus_index(int id) const;
    /// Position of the slack bus. Throws ValidationError if there is not exactly one.
    std::size_t slack_index() const;
};

struct Diagnostic {
    std::string code;
    std::string message;

    bool operator==(const Diagnostic&) const = default;
};

/// Checks every structural invariant of a case and slack connectivity over
/// in-service branches. Returns an empty list iff the case is usable.
std::vector<Diagnostic> validate(const GridCase& grid);

/// Throws ValidationError carrying every diagnostic when `validate` is non-empty.
void require_valid(const GridCase& grid);

/// Bus positions reachable from `start` over in-service branches.
std::vector<bool> reachable_from(const GridCase& grid, std::size_t start);

/// Indices of in-service branches whose removal disconnects the in-service graph.
std::vector<bool> bridge_branches(const GridCase& grid);

} // namespace gridwarm
