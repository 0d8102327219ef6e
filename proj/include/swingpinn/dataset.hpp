#pragma once

#include "swingpinn/power_system.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace swingpinn {

/// One disturbance's sampled post-trip trajectory, re-timed so t = 0 is the
/// instant of fault clearing.
struct TrajectoryRecord {
    double dP7 = 0.0;
    VectorXd x0;      // state at the clearing instant
    VectorXd times;   // seconds, within [0, 2]
    MatrixXd states;  // one row per time, one column per state
};

/// Evenly spaced training selection: n_traj disturbance values over
/// [dp_min, dp_max] by n_time instants over [t_min, t_max], endpoints included.
struct GridSpec {
    int n_traj = 0;   // N_P
    int n_time = 0;   // N_T
    double dp_min = 0.0, dp_max = 6.0;
    double t_min = 0.0, t_max = 2.0;

    int point_count() const { return n_traj * n_time; }
};

/// Unlabelled (t, dP7) grid for the physics residual.
struct CollocationGrid {
    MatrixXd points;  // 2 x N_f rows (t; dP7)
    int n_f = 0;
};

/// Labelled points: inputs (t; dP7), simulated states, and the per-point
/// initial condition of the owning trajectory.
struct LabelledSet {
    MatrixXd inputs;  // 2 x N
    MatrixXd labels;  // n_state x N
    MatrixXd x0;      // n_state x N
};

/// Evenly spaced grid over [lo, hi] with n points, endpoints included
/// (n == 1 yields {lo}). Values are exact multiples of 1e-6.
VectorXd even_grid(double lo, double hi, int n);

/// Default collocation layout: 25 disturbances by 41 instants.
CollocationGrid collocation_grid(int n_traj = 25, int n_per_traj = 41);

/// Full staged scenario: base equilibrium, disturbance for settle_s, short
/// circuit for fault_s, then the post-trip transient sampled at `times`
/// (seconds after clearing). Reference tolerance unless overridden.
TrajectoryRecord simulate_scenario(const SystemModel& model, double dP7,
                                   const Eigen::Ref<const VectorXd>& times, double rtol = 1e-9);

/// Directory-backed trajectory store: one binary file per disturbance plus a
/// CSV manifest. Records are simulated on demand and cached; regeneration
/// with an identical configuration is bitwise idempotent.
class Database {
public:
    Database(std::filesystem::path dir, SystemModel model, double rtol = 1e-9);

    const std::filesystem::path& dir() const { return dir_; }
    const SystemModel& model() const { return model_; }
    double rtol() const { return rtol_; }

    /// Simulates and persists any requested trajectory not yet stored (or
    /// stored on a coarser time grid); per-scenario failures are recorded in
    /// the manifest, not thrown. Returns the number of scenarios simulated.
    int ensure(const std::vector<double>& dp7_values, const Eigen::Ref<const VectorXd>& times);

    /// Loads a stored record; throws if missing or failed.
    TrajectoryRecord load(double dP7) const;

    bool has(double dP7) const;
    std::vector<double> stored_disturbances() const;

    struct ManifestRow {
        double dP7 = 0.0;
        std::string pre_hash;
        std::string file;
        std::int64_t n_samples = 0;
        std::string status;
    };
    const std::vector<ManifestRow>& manifest() const { return rows_; }

private:
    std::filesystem::path dir_;
    SystemModel model_;
    double rtol_;
    std::vector<ManifestRow> rows_;
    std::map<std::int64_t, std::size_t> index_;  // micro-pu key -> row

    void read_manifest();
    void write_manifest() const;
    std::string scenario_hash(double dP7) const;
};

/// Simulates an even n_traj x n_time grid into the database (the persisted
/// trajectory database at a chosen granularity).
int build_database(Database& db, int n_traj, int n_time);

/// Evenly spaced labelled selection; spacing must be representable on the
/// database granularity (0.001 s, 0.002 pu) or an alignment error is thrown.
/// Points are ordered disturbance-major.
LabelledSet select_training_subset(Database& db, const GridSpec& spec);

/// 960 labelled points: 24 disturbances x 40 instants placed at cell centers
/// of the input domain (offset half a cell from any node-aligned grid).
LabelledSet validation_grid(Database& db);

/// Labelled node-aligned test grid (e.g. 31 x 201 reduced, 301 x 2001 full).
LabelledSet test_grid(Database& db, int n_traj, int n_time);

/// Fraction of columns of `a` whose (t, dP7) pair also appears in `b`.
double overlap_fraction(const MatrixXd& a, const MatrixXd& b);

/// Worker count for scenario simulation: SWINGPINN_THREADS caps the pool.
int worker_count(int jobs);

}  // namespace swingpinn
