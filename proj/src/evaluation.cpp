#include "swingpinn/evaluation.hpp"

#include "swingpinn/ode_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

namespace swingpinn {

std::vector<std::string> state_names(int n_gen, int n_load) {
    std::vector<std::string> names;
    // Case-study bus ids: generators 1..n_gen, loads 7 and 9.
    for (int i = 0; i < n_gen; ++i) names.push_back("delta" + std::to_string(i + 1));
    if (n_load == 2) {
        names.push_back("delta7");
        names.push_back("delta9");
    } else {
        for (int i = 0; i < n_load; ++i) names.push_back("delta_load" + std::to_string(i + 1));
    }
    for (int i = 0; i < n_gen; ++i) names.push_back("omega" + std::to_string(i + 1));
    return names;
}

AccuracyReport test_mse(const Checkpoint& ckpt, const LabelledSet& grid) {
    const MatrixXd pred = forward(ckpt.params, ckpt.config, ckpt.norm, grid.inputs);
    const MatrixXd err = pred - grid.labels;
    AccuracyReport report;
    report.mse = err.array().square().rowwise().mean();
    return report;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

DistributionStats distribution_stats(std::vector<double> values) {
    if (values.empty()) throw Error("evaluation", "empty sample for distribution statistics");
    std::sort(values.begin(), values.end());
    DistributionStats s;
    s.min = values.front();
    s.max = values.back();
    s.median = quantile_sorted(values, 0.5);
    s.q1 = quantile_sorted(values, 0.25);
    s.q3 = quantile_sorted(values, 0.75);
    const double iqr = s.q3 - s.q1;
    s.whisker_lo = s.min;
    s.whisker_hi = s.max;
    for (double v : values) {
        if (v >= s.q1 - 1.5 * iqr) {
            s.whisker_lo = v;
            break;
        }
    }
    for (auto it = values.rbegin(); it != values.rend(); ++it) {
        if (*it <= s.q3 + 1.5 * iqr) {
            s.whisker_hi = *it;
            break;
        }
    }
    return s;
}

std::vector<BandRow> error_bands(const Checkpoint& ckpt, const LabelledSet& grid, BandAxis axis) {
    const MatrixXd pred = forward(ckpt.params, ckpt.config, ckpt.norm, grid.inputs);
    const MatrixXd err = pred - grid.labels;
    const int axis_row = axis == BandAxis::Time ? 0 : 1;

    // group columns by the marginal coordinate
    std::map<std::int64_t, std::vector<Eigen::Index>> groups;
    for (Eigen::Index c = 0; c < grid.inputs.cols(); ++c)
        groups[std::llround(grid.inputs(axis_row, c) * 1e6)].push_back(c);

    std::vector<BandRow> rows;
    for (int i = 0; i < err.rows(); ++i) {
        for (const auto& [key, cols] : groups) {
            std::vector<double> e;
            e.reserve(cols.size());
            double sum = 0.0;
            for (Eigen::Index c : cols) {
                e.push_back(err(i, c));
                sum += err(i, c);
            }
            std::sort(e.begin(), e.end());
            BandRow row;
            row.state = i;
            row.grid_value = static_cast<double>(key) * 1e-6;
            row.q0 = e.front();
            row.q25 = quantile_sorted(e, 0.25);
            row.q50 = quantile_sorted(e, 0.5);
            row.q75 = quantile_sorted(e, 0.75);
            row.q100 = e.back();
            row.mean = sum / static_cast<double>(e.size());
            rows.push_back(row);
        }
    }
    return rows;
}

VectorXd critical_share(const Eigen::Ref<const MatrixXd>& angle_gap, double threshold) {
    VectorXd share(angle_gap.cols());
    for (Eigen::Index t = 0; t < angle_gap.cols(); ++t)
        share[t] = (angle_gap.col(t).array() > threshold).cast<double>().mean();
    return share;
}

MatrixXd angle_gap_from_labels(const LabelledSet& grid, int n_traj, int n_time, int n_gen) {
    if (grid.labels.cols() != static_cast<Eigen::Index>(n_traj) * n_time)
        throw Error("evaluation", "grid shape mismatch for angle gap extraction");
    MatrixXd gap(n_traj, n_time);
    for (int i = 0; i < n_traj; ++i)
        for (int j = 0; j < n_time; ++j) {
            const Eigen::Index c = static_cast<Eigen::Index>(i) * n_time + j;
            gap(i, j) = grid.labels(n_gen, c) - grid.labels(n_gen + 1, c);
        }
    return gap;
}

namespace {

/// Repeats `body` until at least 20 ms elapse; returns seconds per call.
template <typename F>
double timed_per_call(F&& body) {
    body();  // warm-up
    body();
    int reps = 1;
    for (;;) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int r = 0; r < reps; ++r) body();
        const auto t1 = std::chrono::steady_clock::now();
        const double elapsed = std::chrono::duration<double>(t1 - t0).count();
        if (elapsed >= 0.02 || reps >= (1 << 22))
            return elapsed / static_cast<double>(reps);
        reps *= 4;
    }
}

}  // namespace

TimingReport timing_benchmark(const SystemModel& model,
                              const std::vector<Checkpoint>& checkpoints,
                              const std::vector<std::string>& variant_names,
                              const std::vector<double>& rtols,
                              const std::vector<double>& horizons, double dP7, int nn_batch) {
    if (checkpoints.size() != variant_names.size())
        throw Error("evaluation", "checkpoint/name count mismatch");

    TimingReport report;
    report.horizons = horizons;
    report.solver_rtols = rtols;
    report.nn_variants = variant_names;
    report.solver_s_per_point.resize(static_cast<Eigen::Index>(rtols.size()),
                                     static_cast<Eigen::Index>(horizons.size()));
    report.nn_s_per_point.resize(static_cast<Eigen::Index>(checkpoints.size()),
                                 static_cast<Eigen::Index>(horizons.size()));

    // Post-trip initial condition for the solver runs.
    VectorXd t0_vec(1);
    t0_vec << 0.0;
    const TrajectoryRecord rec = simulate_scenario(model, dP7, t0_vec);
    const auto stages = build_event_stages(model, Disturbance{dP7});
    const ReducedSystem& post = stages.back().system;
    const Disturbance u{dP7};

    for (std::size_t h = 0; h < horizons.size(); ++h) {
        const double horizon = horizons[h];
        for (std::size_t s = 0; s < rtols.size(); ++s) {
            SolverSettings settings;
            settings.rtol = rtols[s];
            settings.atol = rtols[s];
            settings.h_init = 1e-3;
            const double per_integration = timed_per_call([&]() {
                auto rhs = [&](double, const VectorXd& x, VectorXd& dx) {
                    dx = swing_rhs_flat(x, u, post);
                };
                auto res = integrate_adaptive(rhs, rec.x0, 0.0, horizon, settings);
                if (!res.ok) throw Error("evaluation", "benchmark integration failed: " + res.error);
            });
            // one queried data point per fresh integration
            report.solver_s_per_point(static_cast<Eigen::Index>(s),
                                      static_cast<Eigen::Index>(h)) = per_integration;
        }
        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
            const Checkpoint& ckpt = checkpoints[c];
            MatrixXd inputs(2, nn_batch);
            for (int j = 0; j < nn_batch; ++j) {
                inputs(0, j) = horizon;
                inputs(1, j) = 6.0 * static_cast<double>(j) / std::max(1, nn_batch - 1);
            }
            const double per_batch = timed_per_call([&]() {
                volatile double sink =
                    forward(ckpt.params, ckpt.config, ckpt.norm, inputs).sum();
                (void)sink;
            });
            report.nn_s_per_point(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(h)) =
                per_batch / static_cast<double>(nn_batch);
        }
    }

    report.metadata.push_back("protocol=fresh integration per horizon (1 point) vs batched NN pass / batch size");
    report.metadata.push_back("nn_batch=" + std::to_string(nn_batch));
    report.metadata.push_back("dP7=" + std::to_string(dP7));
    report.metadata.push_back("hardware_concurrency=" +
                              std::to_string(std::thread::hardware_concurrency()));
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void write_timing_csv(const std::string& path, const TimingReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("evaluation", "cannot write " + path);
    for (const auto& meta : report.metadata) out << "# " << meta << "\n";
    out << "horizon_s";
    for (double r : report.solver_rtols) out << ",rk45_" << fmt(r);
    for (const auto& name : report.nn_variants) out << ",nn_" << name;
    out << "\n";
    for (std::size_t h = 0; h < report.horizons.size(); ++h) {
        out << fmt(report.horizons[h]);
        for (Eigen::Index s = 0; s < report.solver_s_per_point.rows(); ++s)
            out << "," << fmt(report.solver_s_per_point(s, static_cast<Eigen::Index>(h)));
        for (Eigen::Index c = 0; c < report.nn_s_per_point.rows(); ++c)
            out << "," << fmt(report.nn_s_per_point(c, static_cast<Eigen::Index>(h)));
        out << "\n";
    }
}

void write_band_csv(const std::string& path, const std::vector<BandRow>& rows, BandAxis axis,
                    const std::vector<std::string>& names) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("evaluation", "cannot write " + path);
    out << "state,axis,grid_value,q0,q25,q50,q75,q100,mean\n";
    const char* axis_name = axis == BandAxis::Time ? "time" : "power";
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                      names[static_cast<std::size_t>(r.state)].c_str(), axis_name, r.grid_value,
                      r.q0, r.q25, r.q50, r.q75, r.q100, r.mean);
        out << buf << "\n";
    }
}

}  // namespace swingpinn
