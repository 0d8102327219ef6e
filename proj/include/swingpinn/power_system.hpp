#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace swingpinn {

using Eigen::MatrixXd;
using Eigen::MatrixXcd;
using Eigen::VectorXd;

/// Error type carrying the module it originated from; the CLI maps it to
/// structured `E:<module>:<reason>` lines.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& message)
        : std::runtime_error("E:" + module + ":" + message), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

enum class BusKind { Generator, Load, Passive };

/// One branch of the physical network, pure reactance in pu.
struct Branch {
    int from = 0;
    int to = 0;
    double reactance = 0.0;
};

/// Bus admittance description before Kron reduction. `retained` lists the
/// (0-based) indices of generator and load buses; every other bus must have
/// zero injection.
struct FullNetwork {
    int bus_count = 0;
    MatrixXcd admittance;
    std::vector<int> retained;
};

/// Assembles the symmetric bus admittance matrix of a lossless network.
FullNetwork build_network(int bus_count, const std::vector<Branch>& branches,
                          std::vector<int> retained);

/// Schur complement of the admittance matrix over the retained buses:
/// Y_rr - Y_re * Y_ee^{-1} * Y_er. Throws on a singular eliminated block.
MatrixXcd kron_reduce(const FullNetwork& net);

/// Kron-reduced swing model: effective reactances between retained buses plus
/// the machine and load parameters entering the right-hand side. Generators
/// come first in all per-bus arrays, loads after.
struct ReducedSystem {
    int n_gen = 0;
    int n_load = 0;
    MatrixXd X;         // effective reactances; 0 marks "no coupling"
    VectorXd V;         // voltage magnitudes, pu
    VectorXd H;         // inertia constants (generators), s
    VectorXd D;         // damping constants (loads), pu*s/rad
    VectorXd P_set;     // power set-points, pu (loads negative)
    double omega0 = 0.0;
    int disturbance_index = -1;  // retained-bus index receiving dP

    MatrixXd coupling;  // V_i * V_j / X_ij, zero where uncoupled

    int n_bus() const { return n_gen + n_load; }
    int n_state() const { return n_gen + n_load + n_gen; }

    /// Validates invariants and precomputes the coupling matrix.
    void finalize();
};

/// Dynamic state: angles for every retained bus (generators first), rotor
/// frequencies for the generators.
struct SystemState {
    VectorXd delta;  // rad
    VectorXd omega;  // rad/s

    VectorXd flatten() const;
    static SystemState unflatten(const Eigen::Ref<const VectorXd>& x, int n_gen, int n_load);
};

struct Disturbance {
    double dP7 = 0.0;  // load change at the disturbance bus, pu
};

/// Swing-equation right-hand side: [delta_dot; omega_dot].
VectorXd swing_rhs(const SystemState& state, const Disturbance& u, const ReducedSystem& sys);

/// Same dynamics on the flattened state vector (hot path for integration).
VectorXd swing_rhs_flat(const Eigen::Ref<const VectorXd>& x, const Disturbance& u,
                        const ReducedSystem& sys);

/// Analytic Jacobian d(rhs)/d(state) at a flattened state.
MatrixXd swing_rhs_jacobian(const Eigen::Ref<const VectorXd>& x, const ReducedSystem& sys);

/// Net accelerating power per bus: P_set + dP - sum_j V_i V_j / X_ij * sin(d_i - d_j).
VectorXd bus_power_mismatch(const Eigen::Ref<const VectorXd>& delta, const Disturbance& u,
                            const ReducedSystem& sys);

/// Steady operating point. For a nonzero net injection the lossless system has
/// no fixed point; the loads absorb the surplus through a common angle drift
/// `slip` and the generators run at omega0 + slip. At slip = 0 this is an
/// ordinary equilibrium.
struct Equilibrium {
    SystemState state;
    double slip = 0.0;      // rad/s
    double residual = 0.0;  // inf-norm of rhs minus the uniform drift
    int iterations = 0;
};

/// Constant state drift of a steady-slip operating point: angles advance at
/// `slip`, frequencies are constant.
VectorXd drift_vector(const ReducedSystem& sys, double slip);

/// Newton solve for the steady operating point. The reference angle delta_0 is
/// pinned to the guess. Throws Error("power_system", ...) carrying the final
/// residual when Newton fails to converge.
Equilibrium equilibrium_solve(const ReducedSystem& sys, const Disturbance& u,
                              const SystemState& guess, int max_iterations = 60,
                              double tolerance = 1e-12);

enum class StageLabel { PreDisturbance, Disturbance, ShortCircuit, PostTrip };

const char* to_string(StageLabel label);

/// One stage of the contingency sequence. `duration` is +inf for the
/// open-ended final stage.
struct EventStage {
    ReducedSystem system;
    double duration = 0.0;
    StageLabel label = StageLabel::Disturbance;
};

struct EventSequence {
    int disturbance_bus = 7;
    int fault_bus = 9;
    std::pair<int, int> trip_line = {8, 9};
    double settle_s = 5.0;
    double fault_s = 0.05;
};

/// Per-bus data as read from the system configuration file.
struct BusSpec {
    int id = 0;
    BusKind kind = BusKind::Passive;
    double H = 0.0;
    double D = 0.0;
    double P_set = 0.0;
    double V = 1.0;
};

/// Full model description: physical buses and lines plus the event sequence.
struct SystemModel {
    std::string name;
    std::vector<BusSpec> buses;
    std::vector<Branch> lines;  // endpoints are bus ids
    double omega0 = 0.0;
    EventSequence events;
    std::string config_digest;  // content hash of the source configuration
};

/// Topology variants used by the event sequence.
enum class Topology { Intact, OneTieLineTripped };

/// Branch list for a topology: the tripped variant drops exactly one circuit
/// of the configured trip line. Endpoints are dense bus indices.
std::vector<Branch> stage_branches(const SystemModel& model, Topology topology);

/// Admittance description for a topology (retained = generators and loads).
FullNetwork stage_network(const SystemModel& model, Topology topology);

/// Builds the Kron-reduced system for a topology. `faulted` zeroes the fault
/// bus voltage (short circuit); all V_i V_j / X_ij terms at that bus vanish.
ReducedSystem make_reduced(const SystemModel& model, Topology topology, bool faulted = false);

/// The staged contingency: disturbance (settle_s), short circuit (fault_s),
/// post-trip (open-ended, one tie-line circuit removed).
std::vector<EventStage> build_event_stages(const SystemModel& model, const Disturbance& u);

/// Loads a system configuration (JSON) and validates it.
SystemModel load_system_config(const std::string& path);

/// Parses a configuration from a JSON string (used by load_system_config).
SystemModel parse_system_config(const std::string& json_text);

}  // namespace swingpinn
