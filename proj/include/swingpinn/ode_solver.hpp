#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace swingpinn {

struct SolverSettings {
    double rtol = 1e-9;
    double atol = 1e-9;
    double h_init = 1e-3;
    double h_max = std::numeric_limits<double>::infinity();
    std::int64_t max_steps = 1'000'000;
};

/// Accepted steps of one adaptive integration plus the per-step quartic
/// interpolation coefficients of the Dormand-Prince continuous extension.
/// Immutable after construction; sampling is a pure read.
class DenseTrajectory {
public:
    DenseTrajectory() = default;

    double t_begin() const { return times_.front(); }
    double t_end() const { return times_.back(); }
    std::size_t step_count() const { return times_.empty() ? 0 : times_.size() - 1; }
    const std::vector<double>& knots() const { return times_; }
    const Eigen::MatrixXd& states() const { return states_; }  // one column per knot
    std::int64_t rhs_evaluations() const { return n_rhs_; }

    /// State at an arbitrary time inside the integrated span. Knot times
    /// reproduce the stored states exactly.
    Eigen::VectorXd at(double t) const {
        if (times_.empty()) throw std::out_of_range("empty trajectory");
        if (t < times_.front() || t > times_.back())
            throw std::out_of_range("sample time " + std::to_string(t) +
                                    " outside integrated span [" + std::to_string(times_.front()) +
                                    ", " + std::to_string(times_.back()) + "]");
        const auto it = std::upper_bound(times_.begin(), times_.end(), t);
        std::size_t k = static_cast<std::size_t>(it - times_.begin());
        if (k > 0) --k;
        if (k >= step_count()) k = step_count() - 1;
        if (t == times_[k]) return states_.col(static_cast<Eigen::Index>(k));
        if (t == times_[k + 1]) return states_.col(static_cast<Eigen::Index>(k + 1));

        const double h = times_[k + 1] - times_[k];
        const double th = (t - times_[k]) / h;
        const auto& c = cont_[k];
        // u(th) = x_k + th*(c1 + (1-th)*(c2 + th*(c3 + (1-th)*c4)))
        return states_.col(static_cast<Eigen::Index>(k)) +
               th * (c.col(0) + (1.0 - th) * (c.col(1) + th * (c.col(2) + (1.0 - th) * c.col(3))));
    }

    /// Batch sampling at a list of times; one column per time.
    Eigen::MatrixXd sample(const Eigen::Ref<const Eigen::VectorXd>& sample_times) const {
        Eigen::MatrixXd out(states_.rows(), sample_times.size());
        for (Eigen::Index i = 0; i < sample_times.size(); ++i) out.col(i) = at(sample_times[i]);
        return out;
    }

    /// Incremental assembly during integration.
    struct Builder {
        std::vector<double> times;
        std::vector<Eigen::VectorXd> states;
        std::vector<Eigen::Matrix<double, Eigen::Dynamic, 4>> cont;

        void start(const Eigen::VectorXd& x0, double t0) {
            times.push_back(t0);
            states.push_back(x0);
        }
        void push(double t, const Eigen::VectorXd& x,
                  const Eigen::Matrix<double, Eigen::Dynamic, 4>& c) {
            times.push_back(t);
            states.push_back(x);
            cont.push_back(c);
        }
        DenseTrajectory finish(std::int64_t n_rhs) && {
            DenseTrajectory traj;
            traj.times_ = std::move(times);
            traj.cont_ = std::move(cont);
            traj.n_rhs_ = n_rhs;
            traj.states_.resize(states.empty() ? 0 : states.front().size(),
                                static_cast<Eigen::Index>(states.size()));
            for (std::size_t i = 0; i < states.size(); ++i)
                traj.states_.col(static_cast<Eigen::Index>(i)) = states[i];
            return traj;
        }
    };

private:
    std::vector<double> times_;
    Eigen::MatrixXd states_;
    std::vector<Eigen::Matrix<double, Eigen::Dynamic, 4>> cont_;
    std::int64_t n_rhs_ = 0;
};

struct IntegrationResult {
    DenseTrajectory trajectory;
    bool ok = false;
    std::string error;

    const DenseTrajectory& value() const {
        if (!ok) throw std::runtime_error("E:ode_solver:" + error);
        return trajectory;
    }
};

namespace dopri {

// Dormand-Prince 5(4) tableau.
inline constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
inline constexpr double a21 = 1.0 / 5.0;
inline constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
inline constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
inline constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                        a54 = -212.0 / 729.0;
inline constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                        a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
inline constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                        b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
// 5th-order weights minus the embedded 4th-order weights.
inline constexpr double e1 = b1 - 5179.0 / 57600.0, e3 = b3 - 7571.0 / 16695.0,
                        e4 = b4 - 393.0 / 640.0, e5 = b5 + 92097.0 / 339200.0,
                        e6 = b6 - 187.0 / 2100.0, e7 = -1.0 / 40.0;
// Continuous-extension coefficients.
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

}  // namespace dopri

/// One explicit Dormand-Prince step from (t, x) with step h. `k1` must hold
/// rhs(t, x); `k7` receives rhs(t+h, x_new) for FSAL reuse. Fills the
/// 5th-order solution, the embedded error vector, and the four dense-output
/// coefficient columns.
template <typename Rhs>
void dopri_step(Rhs&& rhs, double t, const Eigen::VectorXd& x, double h,
                const Eigen::VectorXd& k1, Eigen::VectorXd& k7, Eigen::VectorXd& x_new,
                Eigen::VectorXd& err, Eigen::Matrix<double, Eigen::Dynamic, 4>& cont) {
    using namespace dopri;
    const Eigen::Index n = x.size();
    Eigen::VectorXd k2(n), k3(n), k4(n), k5(n), k6(n);

    rhs(t + c2 * h, (x + h * (a21 * k1)).eval(), k2);
    rhs(t + c3 * h, (x + h * (a31 * k1 + a32 * k2)).eval(), k3);
    rhs(t + c4 * h, (x + h * (a41 * k1 + a42 * k2 + a43 * k3)).eval(), k4);
    rhs(t + c5 * h, (x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)).eval(), k5);
    rhs(t + h, (x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)).eval(), k6);
    x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    rhs(t + h, x_new, k7);

    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    cont.resize(n, 4);
    const Eigen::VectorXd dx = x_new - x;
    cont.col(0) = dx;
    cont.col(1) = h * k1 - dx;
    cont.col(2) = dx - h * k7 - cont.col(1);
    cont.col(3) = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
}

/// Adaptive integration over [t_a, t_b] with mixed absolute/relative error
/// control. On failure the partial trajectory up to the last accepted step is
/// attached to the result.
template <typename Rhs>
IntegrationResult integrate_adaptive(Rhs&& rhs, const Eigen::VectorXd& x0, double t_a, double t_b,
                                     const SolverSettings& settings) {
    IntegrationResult result;
    if (!(t_a < t_b)) {
        result.error = "integration span must satisfy t_a < t_b";
        return result;
    }
    if (!x0.allFinite()) {
        result.error = "non-finite initial state";
        return result;
    }
    if (settings.rtol <= 0.0 || settings.atol <= 0.0) {
        result.error = "tolerances must be positive";
        return result;
    }

    const Eigen::Index n = x0.size();
    DenseTrajectory::Builder builder;
    builder.start(x0, t_a);

    Eigen::VectorXd x = x0, k1(n), k7(n), x_new(n), err(n);
    Eigen::Matrix<double, Eigen::Dynamic, 4> cont(n, 4);
    double t = t_a;
    std::int64_t n_rhs = 0;

    auto counted_rhs = [&](double tt, const Eigen::VectorXd& xx, Eigen::VectorXd& out) {
        rhs(tt, xx, out);
        ++n_rhs;
    };

    counted_rhs(t, x, k1);
    double h = std::min({settings.h_init, settings.h_max, t_b - t_a});

    constexpr double safety = 0.9, fac_min = 0.2, fac_max_default = 10.0, order_exp = 0.2;
    double fac_max = fac_max_default;

    for (std::int64_t step = 0; step < settings.max_steps; ++step) {
        if (t >= t_b) break;
        h = std::min(h, t_b - t);
        const double h_floor =
            16.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(t), 1.0);
        if (h < h_floor) {
            result.trajectory = std::move(builder).finish(n_rhs);
            result.error = "step size underflow at t=" + std::to_string(t);
            return result;
        }

        dopri_step(counted_rhs, t, x, h, k1, k7, x_new, err, cont);

        double err_norm_sq = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sc =
                settings.atol + settings.rtol * std::max(std::abs(x[i]), std::abs(x_new[i]));
            const double q = err[i] / sc;
            err_norm_sq += q * q;
        }
        const double err_norm = std::sqrt(err_norm_sq / static_cast<double>(n));

        if (!std::isfinite(err_norm)) {
            result.trajectory = std::move(builder).finish(n_rhs);
            result.error = "non-finite state during integration at t=" + std::to_string(t);
            return result;
        }

        if (err_norm <= 1.0) {
            t += h;
            x = x_new;
            k1.swap(k7);  // FSAL
            builder.push(t, x, cont);
            fac_max = fac_max_default;
        } else {
            fac_max = 1.0;
        }

        const double fac =
            (err_norm == 0.0)
                ? fac_max
                : std::clamp(safety * std::pow(err_norm, -order_exp), fac_min, fac_max);
        h = std::min(h * fac, settings.h_max);
    }

    const bool reached = t >= t_b;
    result.trajectory = std::move(builder).finish(n_rhs);
    if (reached) {
        result.ok = true;
    } else {
        result.error = "maximum step count exceeded at t=" + std::to_string(t);
    }
    return result;
}

/// States at the requested times; one column per time (spec operation
/// `sample` as a free function).
inline Eigen::MatrixXd sample(const DenseTrajectory& traj,
                              const Eigen::Ref<const Eigen::VectorXd>& times) {
    return traj.sample(times);
}

}  // namespace swingpinn
