#pragma once

#include "swingpinn/dataset.hpp"
#include "swingpinn/mlp.hpp"

#include <string>
#include <vector>

namespace swingpinn {

/// State column names in flatten order (delta1..delta4, delta7, delta9,
/// omega1..omega4 for the default case).
std::vector<std::string> state_names(int n_gen, int n_load);

struct AccuracyReport {
    VectorXd mse;  // per state, physical units (rad^2, rad^2/s^2)
};

/// Per-state mean squared error of a checkpoint over a labelled grid.
AccuracyReport test_mse(const Checkpoint& ckpt, const LabelledSet& grid);

/// Boxplot statistics over per-seed MSE values for one state.
struct DistributionStats {
    double median = 0.0, q1 = 0.0, q3 = 0.0;
    double whisker_lo = 0.0, whisker_hi = 0.0;  // 1.5 IQR convention, clipped to data
    double min = 0.0, max = 0.0;
};

DistributionStats distribution_stats(std::vector<double> values);

enum class BandAxis { Time, Power };

/// Signed-error quantiles marginalized along one input axis.
struct BandRow {
    int state = 0;
    double grid_value = 0.0;
    double q0 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q100 = 0.0;
    double mean = 0.0;
};

std::vector<BandRow> error_bands(const Checkpoint& ckpt, const LabelledSet& grid, BandAxis axis);

/// Fraction of trajectories whose inter-area angle difference exceeds the
/// threshold, per time instant. `angle_gap` holds delta7 - delta9 with one row
/// per trajectory and one column per time.
VectorXd critical_share(const Eigen::Ref<const MatrixXd>& angle_gap,
                        double threshold = M_PI / 2.0);

/// delta7 - delta9 extracted from a disturbance-major labelled grid.
MatrixXd angle_gap_from_labels(const LabelledSet& grid, int n_traj, int n_time, int n_gen);

struct TimingReport {
    std::vector<double> horizons;             // seconds
    std::vector<double> solver_rtols;
    std::vector<std::string> nn_variants;     // e.g. default, wider, deeper
    MatrixXd solver_s_per_point;              // n_rtols x n_horizons
    MatrixXd nn_s_per_point;                  // n_variants x n_horizons
    std::vector<std::string> metadata;
};

/// Wall-clock comparison of batched network evaluation against fresh
/// adaptive integrations to each horizon (one queried point per integration).
/// Short measurements are repeated until the timer resolution is adequate.
TimingReport timing_benchmark(const SystemModel& model,
                              const std::vector<Checkpoint>& checkpoints,
                              const std::vector<std::string>& variant_names,
                              const std::vector<double>& rtols,
                              const std::vector<double>& horizons, double dP7 = 2.0,
                              int nn_batch = 2001);

void write_timing_csv(const std::string& path, const TimingReport& report);

void write_band_csv(const std::string& path, const std::vector<BandRow>& rows, BandAxis axis,
                    const std::vector<std::string>& names);

}  // namespace swingpinn
