#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "swingpinn/dataset.hpp"
#include "swingpinn/ode_solver.hpp"
#include "swingpinn/power_system.hpp"

#include <cmath>
#include <random>

using namespace swingpinn;

namespace {

SystemModel load_default_model() { return load_system_config(SWINGPINN_CONFIG_PATH); }

SystemState flat_guess(const ReducedSystem& sys) {
    SystemState s;
    s.delta = VectorXd::Zero(sys.n_bus());
    s.omega = VectorXd::Constant(sys.n_gen, sys.omega0);
    return s;
}

/// Independent Kron oracle: eliminate one bus at a time with the classic
/// single-node formula Y'_ij = Y_ij - Y_ik Y_kj / Y_kk.
MatrixXcd kron_by_node_elimination(MatrixXcd y, std::vector<int> eliminate) {
    std::sort(eliminate.rbegin(), eliminate.rend());
    for (int k : eliminate) {
        const Eigen::Index n = y.rows();
        MatrixXcd next(n - 1, n - 1);
        for (Eigen::Index i = 0, ii = 0; i < n; ++i) {
            if (i == k) continue;
            for (Eigen::Index j = 0, jj = 0; j < n; ++j) {
                if (j == k) continue;
                next(ii, jj) = y(i, j) - y(i, k) * y(k, j) / y(k, k);
                ++jj;
            }
            ++ii;
        }
        y = next;
    }
    return y;
}

}  // namespace

TEST_CASE("swing_rhs: zero at the base equilibrium") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::Intact);
    const auto eq = equilibrium_solve(sys, Disturbance{0.0}, flat_guess(sys));
    const VectorXd rhs = swing_rhs(eq.state, Disturbance{0.0}, sys);
    CHECK(rhs.lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("swing_rhs: single generator hand value") {
    // One machine, H = 6.5 s, no network coupling, 0.5 pu accelerating power.
    ReducedSystem sys;
    sys.n_gen = 1;
    sys.n_load = 0;
    sys.omega0 = 2.0 * M_PI * 60.0;
    sys.X = MatrixXd::Zero(1, 1);
    sys.V = VectorXd::Ones(1);
    sys.H = VectorXd::Constant(1, 6.5);
    sys.D = VectorXd(0);
    sys.P_set = VectorXd::Constant(1, 0.5);
    sys.finalize();

    SystemState state;
    state.delta = VectorXd::Zero(1);
    state.omega = VectorXd::Constant(1, sys.omega0);
    const VectorXd rhs = swing_rhs(state, Disturbance{0.0}, sys);
    const double expected = 2.0 * M_PI * 60.0 * 0.5 / 13.0;
    CHECK(rhs[1] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(rhs[1] == doctest::Approx(14.50).epsilon(5e-4));
}

TEST_CASE("swing_rhs: nominal frequency gives exactly zero angle rate") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::Intact);
    auto eq = equilibrium_solve(sys, Disturbance{0.0}, flat_guess(sys));
    eq.state.omega.setConstant(sys.omega0);
    const VectorXd rhs = swing_rhs(eq.state, Disturbance{0.0}, sys);
    for (int i = 0; i < sys.n_gen; ++i) CHECK(rhs[i] == 0.0);
}

TEST_CASE("swing_rhs: non-finite input is rejected with the offending entry") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::Intact);
    auto state = flat_guess(sys);
    state.delta[2] = std::numeric_limits<double>::quiet_NaN();
    try {
        swing_rhs(state, Disturbance{0.0}, sys);
        FAIL("expected rejection");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("delta[2]") != std::string::npos);
    }
}

TEST_CASE("swing_rhs: translation invariance in angles") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::Intact);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> angle(-1.5, 1.5), freq(-3.0, 3.0), shift(-20.0, 20.0);
    for (int rep = 0; rep < 20; ++rep) {
        SystemState a;
        a.delta = VectorXd::NullaryExpr(sys.n_bus(), [&](Eigen::Index) { return angle(rng); });
        a.omega = VectorXd::NullaryExpr(sys.n_gen,
                                        [&](Eigen::Index) { return sys.omega0 + freq(rng); });
        SystemState b = a;
        const double c = shift(rng);
        b.delta.array() += c;
        const VectorXd ra = swing_rhs(a, Disturbance{1.3}, sys);
        const VectorXd rb = swing_rhs(b, Disturbance{1.3}, sys);
        CHECK((ra - rb).lpNorm<Eigen::Infinity>() < 1e-9);
    }
}

TEST_CASE("swing_rhs_jacobian matches finite differences") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::OneTieLineTripped);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> angle(-2.0, 2.0), freq(-3.0, 3.0);
    VectorXd x(sys.n_state());
    for (int i = 0; i < sys.n_bus(); ++i) x[i] = angle(rng);
    for (int i = 0; i < sys.n_gen; ++i) x[sys.n_bus() + i] = sys.omega0 + freq(rng);

    const Disturbance u{2.5};
    const MatrixXd jac = swing_rhs_jacobian(x, sys);
    const double h = 1e-6;
    for (int j = 0; j < sys.n_state(); ++j) {
        VectorXd xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const VectorXd col = (swing_rhs_flat(xp, u, sys) - swing_rhs_flat(xm, u, sys)) / (2.0 * h);
        CHECK((col - jac.col(j)).lpNorm<Eigen::Infinity>() < 1e-5);
    }
}

TEST_CASE("kron_reduce: no eliminated buses returns the input") {
    const auto net = build_network(3,
                                   {{0, 1, 0.2}, {1, 2, 0.3}},
                                   {0, 1, 2});
    const MatrixXcd reduced = kron_reduce(net);
    CHECK((reduced - net.admittance).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kron_reduce: series chain collapses to the reactance sum") {
    const double x1 = 0.17, x2 = 0.31;
    const auto net = build_network(3, {{0, 1, x1}, {1, 2, x2}}, {0, 2});
    const MatrixXcd reduced = kron_reduce(net);
    const double x_eff = 1.0 / reduced(0, 1).imag();
    CHECK(x_eff == doctest::Approx(x1 + x2).epsilon(1e-12));
}

TEST_CASE("kron_reduce: matches node-elimination oracle on random networks") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> xdist(0.02, 1.2);
    std::uniform_int_distribution<int> sizedist(4, 10);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = sizedist(rng);
        std::vector<Branch> branches;
        for (int i = 1; i < n; ++i) {  // random spanning tree
            std::uniform_int_distribution<int> parent(0, i - 1);
            branches.push_back({parent(rng), i, xdist(rng)});
        }
        std::uniform_int_distribution<int> extra(0, n - 1);
        for (int e = 0; e < n / 2; ++e) {
            const int a = extra(rng), b = extra(rng);
            if (a != b) branches.push_back({a, b, xdist(rng)});
        }
        std::uniform_int_distribution<int> n_elim_dist(1, n - 2);
        const int n_elim = n_elim_dist(rng);
        std::vector<int> all(n);
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), rng);
        std::vector<int> eliminated(all.begin(), all.begin() + n_elim);
        std::vector<int> retained(all.begin() + n_elim, all.end());

        const auto net = build_network(n, branches, retained);
        const MatrixXcd reduced = kron_reduce(net);

        // oracle works on the full matrix and eliminates bus by bus
        std::sort(retained.begin(), retained.end());
        const MatrixXcd expected = kron_by_node_elimination(net.admittance, eliminated);
        CHECK((reduced - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("kron_reduce: isolated eliminated bus reports singularity") {
    // bus 2 has no branches at all
    const auto net = build_network(3, {{0, 1, 0.2}}, {0, 1});
    CHECK_THROWS_AS(kron_reduce(net), Error);
}

TEST_CASE("equilibrium_solve: base case from a flat guess") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::Intact);
    const auto eq = equilibrium_solve(sys, Disturbance{0.0}, flat_guess(sys));
    CHECK(eq.residual < 1e-10);
    CHECK(eq.slip == doctest::Approx(0.0).epsilon(1e-12));
    for (int i = 0; i < sys.n_gen; ++i) CHECK(eq.state.omega[i] == doctest::Approx(sys.omega0));
}

TEST_CASE("equilibrium_solve: disturbed operating point matches the settled transient") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::Intact);
    const auto eq0 = equilibrium_solve(sys, Disturbance{0.0}, flat_guess(sys));
    const Disturbance u{2.0};
    const auto eq = equilibrium_solve(sys, u, eq0.state);
    CHECK(eq.residual < 1e-10);
    // the two load buses absorb the surplus: slip = dP7 / (D7 + D9)
    CHECK(eq.slip == doctest::Approx(2.0 / (sys.D[0] + sys.D[1])).epsilon(1e-10));

    // integrate the disturbance stage: by settle_s the state is near the
    // operating point (angles relative to bus 1, frequencies at omega0+slip)
    auto rhs = [&](double, const VectorXd& x, VectorXd& dx) { dx = swing_rhs_flat(x, u, sys); };
    SolverSettings settings;
    auto res = integrate_adaptive(rhs, eq0.state.flatten(), 0.0, model.events.settle_s, settings);
    REQUIRE(res.ok);
    const VectorXd settled = res.trajectory.states().rightCols(1);
    for (int i = 0; i < sys.n_gen; ++i)
        CHECK(settled[sys.n_bus() + i] == doctest::Approx(sys.omega0 + eq.slip).epsilon(1e-2));
    for (int i = 1; i < sys.n_bus(); ++i) {
        const double rel_settled = settled[i] - settled[0];
        const double rel_eq = eq.state.delta[i] - eq.state.delta[0];
        CHECK(std::abs(rel_settled - rel_eq) < 0.1);
    }
}

TEST_CASE("equilibrium_solve: failure beyond the transfer limit is reported") {
    const auto model = load_default_model();
    const auto sys = make_reduced(model, Topology::Intact);
    const auto eq0 = equilibrium_solve(sys, Disturbance{0.0}, flat_guess(sys));

    // the entire disturbance domain must be solvable
    SystemState guess = eq0.state;
    for (double dp = 1.0; dp <= 6.0; dp += 1.0) {
        const auto eq = equilibrium_solve(sys, Disturbance{dp}, guess);
        CHECK(eq.residual < 1e-10);
        guess = eq.state;
    }

    // sweep past the limit: the first failure carries the final residual
    bool failed = false;
    for (double dp = 6.5; dp <= 14.0 && !failed; dp += 0.5) {
        try {
            guess = equilibrium_solve(sys, Disturbance{dp}, guess).state;
        } catch (const Error& e) {
            failed = true;
            CHECK(std::string(e.what()).find("residual") != std::string::npos);
        }
    }
    CHECK(failed);
}

TEST_CASE("equilibrium: injections balance flows (lossless energy check)") {
    const auto model = load_default_model();
    const auto stages = build_event_stages(model, Disturbance{2.0});
    const ReducedSystem& post = stages.back().system;
    const auto eq0 = equilibrium_solve(post, Disturbance{0.0}, flat_guess(post));
    SUBCASE("undisturbed: mismatch sums to zero") {
        const VectorXd mismatch = bus_power_mismatch(eq0.state.delta, Disturbance{0.0}, post);
        CHECK(std::abs(mismatch.sum()) < 1e-10);
    }
    SUBCASE("disturbed: mismatch sums to the damping-absorbed surplus") {
        const Disturbance u{2.0};
        const auto eq = equilibrium_solve(post, u, eq0.state);
        const VectorXd mismatch = bus_power_mismatch(eq.state.delta, u, post);
        CHECK(mismatch.sum() == doctest::Approx(eq.slip * post.D.sum()).epsilon(1e-10));
    }
}

TEST_CASE("build_event_stages: sequence, durations, stage systems") {
    const auto model = load_default_model();
    const auto stages = build_event_stages(model, Disturbance{2.0});
    REQUIRE(stages.size() == 3);
    CHECK(stages[0].label == StageLabel::Disturbance);
    CHECK(stages[1].label == StageLabel::ShortCircuit);
    CHECK(stages[2].label == StageLabel::PostTrip);
    CHECK(stages[0].duration == doctest::Approx(5.0));
    CHECK(stages[1].duration == doctest::Approx(0.05));
    CHECK(std::isinf(stages[2].duration));

    // short circuit: fault bus voltage is zero and its couplings vanish
    const ReducedSystem& fault = stages[1].system;
    CHECK(fault.V[5] == 0.0);
    CHECK(fault.coupling.row(5).cwiseAbs().maxCoeff() == 0.0);
    // voltage restored afterwards
    CHECK(stages[2].system.V[5] > 0.9);
}

TEST_CASE("build_event_stages: tripping one circuit doubles the tie branch") {
    const auto model = load_default_model();
    const auto before = stage_network(model, Topology::Intact);
    const auto after = stage_network(model, Topology::OneTieLineTripped);
    // dense indices of buses 8 and 9
    int idx8 = -1, idx9 = -1;
    for (int i = 0; i < static_cast<int>(model.buses.size()); ++i) {
        if (model.buses[i].id == 8) idx8 = i;
        if (model.buses[i].id == 9) idx9 = i;
    }
    REQUIRE(idx8 >= 0);
    REQUIRE(idx9 >= 0);
    const double b_before = before.admittance(idx8, idx9).imag();
    const double b_after = after.admittance(idx8, idx9).imag();
    const double x_before = 1.0 / b_before;
    const double x_after = 1.0 / b_after;
    CHECK(x_after == doctest::Approx(2.0 * x_before).epsilon(1e-12));

    // stage systems are rebuilt functionally; the reduced post-trip system
    // matches an independent reduction of the tripped network
    const auto stages = build_event_stages(model, Disturbance{0.0});
    const auto expected = make_reduced(model, Topology::OneTieLineTripped);
    CHECK((stages[2].system.X - expected.X).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("build_event_stages: zero disturbance is well-posed") {
    const auto model = load_default_model();
    const auto stages = build_event_stages(model, Disturbance{0.0});
    CHECK(stages.size() == 3);
    CHECK_THROWS_AS(build_event_stages(model, Disturbance{6.5}), Error);
}

TEST_CASE("configuration file: loads and validates") {
    const auto model = load_default_model();
    CHECK(model.buses.size() == 11);
    CHECK(model.lines.size() == 12);
    CHECK(model.omega0 == doctest::Approx(2.0 * M_PI * 60.0));
    CHECK(model.events.disturbance_bus == 7);
    CHECK(model.events.fault_bus == 9);
    CHECK(model.config_digest.size() == 16);

    const auto sys = make_reduced(model, Topology::Intact);
    CHECK(sys.n_gen == 4);
    CHECK(sys.n_load == 2);
    CHECK(sys.n_state() == 10);
    CHECK(sys.P_set.sum() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sys.disturbance_index == 4);
    // X symmetric with positive couplings where lines exist
    CHECK((sys.X - sys.X.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sys.X(4, 5) == doctest::Approx(0.11).epsilon(1e-9));

    CHECK_THROWS_AS(parse_system_config("{ not json"), Error);
}
