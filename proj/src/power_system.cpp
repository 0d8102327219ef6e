#include "swingpinn/power_system.hpp"

#include <json.hpp>

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace swingpinn {

namespace {

constexpr std::complex<double> kImag{0.0, 1.0};

// Couplings below this susceptance are treated as absent lines.
constexpr double kCouplingTol = 1e-9;

void require(bool condition, const std::string& message) {
    if (!condition) throw Error("power_system", message);
}

}  // namespace

FullNetwork build_network(int bus_count, const std::vector<Branch>& branches,
                          std::vector<int> retained) {
    require(bus_count >= 2, "network needs at least two buses");
    MatrixXcd Y = MatrixXcd::Zero(bus_count, bus_count);
    for (const Branch& br : branches) {
        require(br.from >= 0 && br.from < bus_count && br.to >= 0 && br.to < bus_count,
                "branch endpoint out of range");
        require(br.from != br.to, "branch endpoints coincide");
        require(br.reactance > 0.0, "branch reactance must be positive");
        const std::complex<double> y = 1.0 / (kImag * br.reactance);
        Y(br.from, br.from) += y;
        Y(br.to, br.to) += y;
        Y(br.from, br.to) -= y;
        Y(br.to, br.from) -= y;
    }
    std::sort(retained.begin(), retained.end());
    require(!retained.empty(), "retained bus set is empty");
    require(std::adjacent_find(retained.begin(), retained.end()) == retained.end(),
            "retained bus indices must be unique");
    for (int idx : retained)
        require(idx >= 0 && idx < bus_count, "retained bus index out of range");
    return FullNetwork{bus_count, std::move(Y), std::move(retained)};
}

MatrixXcd kron_reduce(const FullNetwork& net) {
    const int n = net.bus_count;
    require(net.admittance.rows() == n && net.admittance.cols() == n,
            "admittance matrix shape mismatch");
    require(net.admittance.isApprox(net.admittance.transpose()),
            "admittance matrix must be symmetric");

    std::vector<bool> keep(n, false);
    for (int idx : net.retained) keep[idx] = true;
    std::vector<int> eliminated;
    for (int i = 0; i < n; ++i)
        if (!keep[i]) eliminated.push_back(i);

    const int nr = static_cast<int>(net.retained.size());
    const int ne = static_cast<int>(eliminated.size());
    if (ne == 0) return net.admittance;

    MatrixXcd Yrr(nr, nr), Yre(nr, ne), Yee(ne, ne);
    for (int i = 0; i < nr; ++i) {
        for (int j = 0; j < nr; ++j) Yrr(i, j) = net.admittance(net.retained[i], net.retained[j]);
        for (int j = 0; j < ne; ++j) Yre(i, j) = net.admittance(net.retained[i], eliminated[j]);
    }
    for (int i = 0; i < ne; ++i)
        for (int j = 0; j < ne; ++j) Yee(i, j) = net.admittance(eliminated[i], eliminated[j]);

    Eigen::FullPivLU<MatrixXcd> lu(Yee);
    if (!lu.isInvertible())
        throw Error("power_system",
                    "eliminated-bus admittance block is singular (isolated or degenerate bus group)");
    MatrixXcd reduced = Yrr - Yre * lu.solve(Yre.transpose());
    // Symmetrize away the solve round-off; the exact result is symmetric.
    return 0.5 * (reduced + reduced.transpose().eval());
}

void ReducedSystem::finalize() {
    const int n = n_bus();
    require(n_gen >= 1, "need at least one generator");
    require(n_load >= 0, "negative load count");
    require(X.rows() == n && X.cols() == n, "reactance matrix shape mismatch");
    require(V.size() == n && P_set.size() == n, "per-bus array size mismatch");
    require(H.size() == n_gen, "inertia vector size mismatch");
    require(D.size() == n_load, "damping vector size mismatch");
    require((H.array() > 0.0).all(), "inertia constants must be positive");
    require((D.array() > 0.0).all(), "damping constants must be positive");
    require(omega0 > 0.0, "nominal frequency must be positive");
    require(X.isApprox(X.transpose()), "effective reactances must be symmetric");

    coupling = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double x = X(i, j);
            if (x == 0.0) continue;
            require(x > 0.0, "effective reactance must be positive where a connection exists");
            coupling(i, j) = V(i) * V(j) / x;
        }
    }
}

VectorXd SystemState::flatten() const {
    VectorXd x(delta.size() + omega.size());
    x << delta, omega;
    return x;
}

SystemState SystemState::unflatten(const Eigen::Ref<const VectorXd>& x, int n_gen, int n_load) {
    const int n = n_gen + n_load;
    if (x.size() != n + n_gen) throw Error("power_system", "state vector size mismatch");
    SystemState s;
    s.delta = x.head(n);
    s.omega = x.tail(n_gen);
    return s;
}

namespace {

void check_finite(const Eigen::Ref<const VectorXd>& x, const ReducedSystem& sys) {
    if (x.allFinite()) return;
    const int n = sys.n_bus();
    for (int i = 0; i < x.size(); ++i) {
        if (std::isfinite(x[i])) continue;
        std::ostringstream msg;
        msg << "non-finite state entry ";
        if (i < n)
            msg << "delta[" << i << "]";
        else
            msg << "omega[" << (i - n) << "]";
        throw Error("power_system", msg.str());
    }
}

}  // namespace

VectorXd bus_power_mismatch(const Eigen::Ref<const VectorXd>& delta, const Disturbance& u,
                            const ReducedSystem& sys) {
    const int n = sys.n_bus();
    VectorXd p = sys.P_set;
    if (sys.disturbance_index >= 0) p[sys.disturbance_index] += u.dP7;
    for (int i = 0; i < n; ++i) {
        double flow = 0.0;
        for (int j = 0; j < n; ++j) {
            const double c = sys.coupling(i, j);
            if (c != 0.0) flow += c * std::sin(delta[i] - delta[j]);
        }
        p[i] -= flow;
    }
    return p;
}

VectorXd swing_rhs_flat(const Eigen::Ref<const VectorXd>& x, const Disturbance& u,
                        const ReducedSystem& sys) {
    const int n = sys.n_bus();
    if (x.size() != sys.n_state()) throw Error("power_system", "state vector size mismatch");
    check_finite(x, sys);

    const auto delta = x.head(n);
    const auto omega = x.segment(n, sys.n_gen);
    const VectorXd mismatch = bus_power_mismatch(delta, u, sys);

    VectorXd dx(sys.n_state());
    for (int i = 0; i < sys.n_gen; ++i) dx[i] = omega[i] - sys.omega0;
    for (int i = 0; i < sys.n_load; ++i)
        dx[sys.n_gen + i] = mismatch[sys.n_gen + i] / sys.D[i];
    for (int i = 0; i < sys.n_gen; ++i)
        dx[n + i] = sys.omega0 / (2.0 * sys.H[i]) * mismatch[i];
    return dx;
}

VectorXd swing_rhs(const SystemState& state, const Disturbance& u, const ReducedSystem& sys) {
    return swing_rhs_flat(state.flatten(), u, sys);
}

MatrixXd swing_rhs_jacobian(const Eigen::Ref<const VectorXd>& x, const ReducedSystem& sys) {
    const int n = sys.n_bus();
    const auto delta = x.head(n);

    // dP_i/ddelta: diagonal sum of B_ij cos(d_i - d_j), off-diagonal -B_ij cos.
    MatrixXd dflow = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        double diag = 0.0;
        for (int j = 0; j < n; ++j) {
            const double c = sys.coupling(i, j);
            if (c == 0.0) continue;
            const double k = c * std::cos(delta[i] - delta[j]);
            dflow(i, j) = -k;
            diag += k;
        }
        dflow(i, i) = diag;
    }

    MatrixXd jac = MatrixXd::Zero(sys.n_state(), sys.n_state());
    for (int i = 0; i < sys.n_gen; ++i) jac(i, n + i) = 1.0;
    for (int i = 0; i < sys.n_load; ++i)
        jac.row(sys.n_gen + i).head(n) = -dflow.row(sys.n_gen + i) / sys.D[i];
    for (int i = 0; i < sys.n_gen; ++i)
        jac.row(n + i).head(n) = -(sys.omega0 / (2.0 * sys.H[i])) * dflow.row(i);
    return jac;
}

VectorXd drift_vector(const ReducedSystem& sys, double slip) {
    VectorXd d = VectorXd::Zero(sys.n_state());
    d.head(sys.n_bus()).setConstant(slip);
    return d;
}

Equilibrium equilibrium_solve(const ReducedSystem& sys, const Disturbance& u,
                              const SystemState& guess, int max_iterations, double tolerance) {
    const int n = sys.n_bus();
    require(guess.delta.size() == n, "guess angle vector size mismatch");
    check_finite(guess.flatten(), sys);

    // Unknowns: angles 1..n-1 (delta_0 pinned to the guess) plus the common
    // slip absorbed by the load damping. Residual: bus power mismatch with
    // D_i * slip subtracted at load buses.
    VectorXd delta = guess.delta;
    double slip = 0.0;

    auto residual = [&](const VectorXd& d, double s) {
        VectorXd r = bus_power_mismatch(d, u, sys);
        for (int i = 0; i < sys.n_load; ++i) r[sys.n_gen + i] -= sys.D[i] * s;
        return r;
    };

    VectorXd r = residual(delta, slip);
    double rnorm = r.lpNorm<Eigen::Infinity>();
    int iter = 0;
    for (; iter < max_iterations && rnorm > tolerance; ++iter) {
        // Jacobian of the residual wrt (delta_1..delta_{n-1}, slip).
        MatrixXd dflow = MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            double diag = 0.0;
            for (int j = 0; j < n; ++j) {
                const double c = sys.coupling(i, j);
                if (c == 0.0) continue;
                const double k = c * std::cos(delta[i] - delta[j]);
                dflow(i, j) = -k;
                diag += k;
            }
            dflow(i, i) = diag;
        }
        MatrixXd jac = MatrixXd::Zero(n, n);
        jac.leftCols(n - 1) = -dflow.rightCols(n - 1);
        for (int i = 0; i < sys.n_load; ++i) jac(sys.n_gen + i, n - 1) = -sys.D[i];

        Eigen::FullPivLU<MatrixXd> lu(jac);
        if (lu.rank() < n) {
            std::ostringstream msg;
            msg << "equilibrium Jacobian singular at iteration " << iter
                << " (residual " << rnorm << ")";
            throw Error("power_system", msg.str());
        }
        const VectorXd step = lu.solve(-r);

        // Backtracking line search on the residual norm.
        double alpha = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            VectorXd delta_try = delta;
            delta_try.tail(n - 1) += alpha * step.head(n - 1);
            const double slip_try = slip + alpha * step[n - 1];
            const VectorXd r_try = residual(delta_try, slip_try);
            const double rnorm_try = r_try.lpNorm<Eigen::Infinity>();
            if (rnorm_try < rnorm) {
                delta = delta_try;
                slip = slip_try;
                r = r_try;
                rnorm = rnorm_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
    }

    if (rnorm > tolerance) {
        std::ostringstream msg;
        msg << "equilibrium solve did not converge: residual " << rnorm << " after " << iter
            << " iterations (dP=" << u.dP7 << ")";
        throw Error("power_system", msg.str());
    }

    Equilibrium eq;
    eq.state.delta = delta;
    eq.state.omega = VectorXd::Constant(sys.n_gen, sys.omega0 + slip);
    eq.slip = slip;
    eq.iterations = iter;
    eq.residual =
        (swing_rhs(eq.state, u, sys) - drift_vector(sys, slip)).lpNorm<Eigen::Infinity>();
    return eq;
}

const char* to_string(StageLabel label) {
    switch (label) {
        case StageLabel::PreDisturbance: return "pre_disturbance";
        case StageLabel::Disturbance: return "disturbance";
        case StageLabel::ShortCircuit: return "short_circuit";
        case StageLabel::PostTrip: return "post_trip";
    }
    return "?";
}

namespace {

int bus_index_of(const SystemModel& model, int id) {
    for (int i = 0; i < static_cast<int>(model.buses.size()); ++i)
        if (model.buses[i].id == id) return i;
    throw Error("power_system", "unknown bus id " + std::to_string(id));
}

}  // namespace

std::vector<Branch> stage_branches(const SystemModel& model, Topology topology) {
    std::vector<Branch> branches;
    bool tripped = false;
    for (const Branch& line : model.lines) {
        if (topology == Topology::OneTieLineTripped && !tripped) {
            const auto [a, b] = model.events.trip_line;
            if ((line.from == a && line.to == b) || (line.from == b && line.to == a)) {
                tripped = true;  // remove exactly one circuit
                continue;
            }
        }
        branches.push_back(Branch{bus_index_of(model, line.from), bus_index_of(model, line.to),
                                  line.reactance});
    }
    if (topology == Topology::OneTieLineTripped && !tripped)
        throw Error("power_system", "trip line not present in configuration");
    return branches;
}

FullNetwork stage_network(const SystemModel& model, Topology topology) {
    std::vector<int> gens, loads;
    for (int i = 0; i < static_cast<int>(model.buses.size()); ++i) {
        if (model.buses[i].kind == BusKind::Generator) gens.push_back(i);
        if (model.buses[i].kind == BusKind::Load) loads.push_back(i);
    }
    std::vector<int> retained = gens;
    retained.insert(retained.end(), loads.begin(), loads.end());
    return build_network(static_cast<int>(model.buses.size()), stage_branches(model, topology),
                         retained);
}

ReducedSystem make_reduced(const SystemModel& model, Topology topology, bool faulted) {
    // Retained buses: generators first (configuration order), then loads.
    std::vector<int> gens, loads;
    for (int i = 0; i < static_cast<int>(model.buses.size()); ++i) {
        if (model.buses[i].kind == BusKind::Generator) gens.push_back(i);
        if (model.buses[i].kind == BusKind::Load) loads.push_back(i);
    }

    FullNetwork net = stage_network(model, topology);
    const MatrixXcd reduced = kron_reduce(net);

    // kron_reduce returns rows/cols ordered by ascending retained index;
    // permute into [generators..., loads...].
    std::vector<int> sorted = net.retained;
    auto position = [&](int bus) {
        return static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), bus) -
                                sorted.begin());
    };

    const int ng = static_cast<int>(gens.size());
    const int nl = static_cast<int>(loads.size());
    const int n = ng + nl;
    std::vector<int> order(n);
    for (int i = 0; i < ng; ++i) order[i] = position(gens[i]);
    for (int i = 0; i < nl; ++i) order[ng + i] = position(loads[i]);

    ReducedSystem sys;
    sys.n_gen = ng;
    sys.n_load = nl;
    sys.omega0 = model.omega0;
    sys.X = MatrixXd::Zero(n, n);
    sys.V = VectorXd::Zero(n);
    sys.P_set = VectorXd::Zero(n);
    sys.H = VectorXd::Zero(ng);
    sys.D = VectorXd::Zero(nl);

    std::vector<int> model_index(n);
    for (int i = 0; i < ng; ++i) model_index[i] = gens[i];
    for (int i = 0; i < nl; ++i) model_index[ng + i] = loads[i];

    for (int i = 0; i < n; ++i) {
        const BusSpec& bus = model.buses[model_index[i]];
        sys.V[i] = bus.V;
        sys.P_set[i] = bus.P_set;
        if (i < ng) sys.H[i] = bus.H;
        else sys.D[i - ng] = bus.D;
        if (bus.id == model.events.disturbance_bus) sys.disturbance_index = i;
        if (faulted && bus.id == model.events.fault_bus) sys.V[i] = 0.0;
    }
    if (sys.disturbance_index < 0)
        throw Error("power_system", "disturbance bus is not a retained bus");

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double b = reduced(order[i], order[j]).imag();
            if (std::abs(b) > kCouplingTol) sys.X(i, j) = 1.0 / b;
        }
    }
    sys.X = (0.5 * (sys.X + sys.X.transpose().eval())).eval();
    sys.finalize();
    return sys;
}

std::vector<EventStage> build_event_stages(const SystemModel& model, const Disturbance& u) {
    require(u.dP7 >= 0.0 && u.dP7 <= 6.0, "disturbance outside [0, 6] pu");
    std::vector<EventStage> stages;
    stages.push_back({make_reduced(model, Topology::Intact, false), model.events.settle_s,
                      StageLabel::Disturbance});
    stages.push_back({make_reduced(model, Topology::Intact, true), model.events.fault_s,
                      StageLabel::ShortCircuit});
    stages.push_back({make_reduced(model, Topology::OneTieLineTripped, false),
                      std::numeric_limits<double>::infinity(), StageLabel::PostTrip});
    return stages;
}

namespace {

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

SystemModel parse_system_config(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error("power_system", std::string("configuration parse failure: ") + e.what());
    }
    try {
        SystemModel model;
        model.name = j.value("name", "unnamed");
        model.omega0 = 2.0 * M_PI * j.at("omega0_hz").get<double>();
        for (const auto& jb : j.at("buses")) {
            BusSpec bus;
            bus.id = jb.at("id").get<int>();
            const std::string kind = jb.at("kind").get<std::string>();
            if (kind == "generator") {
                bus.kind = BusKind::Generator;
                bus.H = jb.at("H").get<double>();
                bus.P_set = jb.at("P_set").get<double>();
                bus.V = jb.at("V").get<double>();
            } else if (kind == "load") {
                bus.kind = BusKind::Load;
                bus.D = jb.at("D").get<double>();
                bus.P_set = jb.at("P_set").get<double>();
                bus.V = jb.at("V").get<double>();
            } else if (kind == "passive") {
                bus.kind = BusKind::Passive;
            } else {
                throw Error("power_system", "unknown bus kind '" + kind + "'");
            }
            model.buses.push_back(bus);
        }
        for (const auto& jl : j.at("lines"))
            model.lines.push_back(Branch{jl.at("from").get<int>(), jl.at("to").get<int>(),
                                         jl.at("X").get<double>()});
        const auto& je = j.at("events");
        model.events.disturbance_bus = je.at("disturbance_bus").get<int>();
        model.events.fault_bus = je.at("fault_bus").get<int>();
        model.events.trip_line = {je.at("trip_line").at(0).get<int>(),
                                  je.at("trip_line").at(1).get<int>()};
        model.events.settle_s = je.at("settle_s").get<double>();
        model.events.fault_s = je.at("fault_s").get<double>();

        char digest[17];
        std::snprintf(digest, sizeof(digest), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(json_text)));
        model.config_digest = digest;
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw Error("power_system", std::string("configuration field error: ") + e.what());
    }
}

SystemModel load_system_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("power_system", "cannot open configuration file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_system_config(ss.str());
}

}  // namespace swingpinn
