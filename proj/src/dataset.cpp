#include "swingpinn/dataset.hpp"

#include "swingpinn/ode_solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

namespace swingpinn {

namespace {

constexpr char kTrajMagic[8] = {'S', 'P', 'T', 'R', 'A', 'J', '0', '1'};

std::int64_t to_micro(double value, const char* what) {
    const double scaled = value * 1e6;
    const std::int64_t key = std::llround(scaled);
    if (std::abs(value - static_cast<double>(key) * 1e-6) > 1e-12)
        throw Error("dataset", std::string(what) + " " + std::to_string(value) +
                                   " is not representable at 1e-6 resolution");
    return key;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_record(const std::filesystem::path& path, const TrajectoryRecord& rec) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("dataset", "cannot write " + path.string());
    out.write(kTrajMagic, sizeof(kTrajMagic));
    const std::int64_t n = rec.times.size();
    const std::int64_t m = rec.states.cols();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&m), sizeof(m));
    out.write(reinterpret_cast<const char*>(&rec.dP7), sizeof(double));
    out.write(reinterpret_cast<const char*>(rec.x0.data()),
              static_cast<std::streamsize>(sizeof(double) * rec.x0.size()));
    out.write(reinterpret_cast<const char*>(rec.times.data()),
              static_cast<std::streamsize>(sizeof(double) * n));
    // row-major sample rows
    for (std::int64_t i = 0; i < n; ++i) {
        Eigen::RowVectorXd row = rec.states.row(i);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(sizeof(double) * m));
    }
    if (!out) throw Error("dataset", "short write to " + path.string());
}

TrajectoryRecord read_record(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("dataset", "cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kTrajMagic, sizeof(magic)) != 0)
        throw Error("dataset", "bad trajectory file magic in " + path.string());
    std::int64_t n = 0, m = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&m), sizeof(m));
    TrajectoryRecord rec;
    in.read(reinterpret_cast<char*>(&rec.dP7), sizeof(double));
    rec.x0.resize(m);
    in.read(reinterpret_cast<char*>(rec.x0.data()),
            static_cast<std::streamsize>(sizeof(double) * m));
    rec.times.resize(n);
    in.read(reinterpret_cast<char*>(rec.times.data()),
            static_cast<std::streamsize>(sizeof(double) * n));
    rec.states.resize(n, m);
    std::vector<double> row(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(sizeof(double) * m));
        for (std::int64_t j = 0; j < m; ++j) rec.states(i, j) = row[static_cast<std::size_t>(j)];
    }
    if (!in) throw Error("dataset", "truncated trajectory file " + path.string());
    return rec;
}

}  // namespace

VectorXd even_grid(double lo, double hi, int n) {
    if (n < 1) throw Error("dataset", "grid needs at least one point");
    VectorXd g(n);
    if (n == 1) {
        g[0] = lo;
        return g;
    }
    const std::int64_t lo_u = to_micro(lo, "grid bound");
    const std::int64_t hi_u = to_micro(hi, "grid bound");
    const std::int64_t span = hi_u - lo_u;
    if (span % (n - 1) == 0) {
        const std::int64_t step = span / (n - 1);
        for (int k = 0; k < n; ++k) g[k] = static_cast<double>(lo_u + step * k) * 1e-6;
    } else {
        for (int k = 0; k < n; ++k)
            g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    }
    return g;
}

CollocationGrid collocation_grid(int n_traj, int n_per_traj) {
    if (n_traj < 1 || n_per_traj < 1) throw Error("dataset", "collocation grid counts must be >= 1");
    const VectorXd dp = even_grid(0.0, 6.0, n_traj);
    const VectorXd tt = even_grid(0.0, 2.0, n_per_traj);
    CollocationGrid grid;
    grid.n_f = n_traj * n_per_traj;
    grid.points.resize(2, grid.n_f);
    int col = 0;
    for (int i = 0; i < n_traj; ++i)
        for (int j = 0; j < n_per_traj; ++j) {
            grid.points(0, col) = tt[j];
            grid.points(1, col) = dp[i];
            ++col;
        }
    return grid;
}

TrajectoryRecord simulate_scenario(const SystemModel& model, double dP7,
                                   const Eigen::Ref<const VectorXd>& times, double rtol) {
    if (dP7 < 0.0 || dP7 > 6.0)
        throw Error("dataset", "dP7 " + std::to_string(dP7) + " outside [0, 6] pu");
    if (times.size() == 0) throw Error("dataset", "empty sample time list");
    for (Eigen::Index i = 0; i < times.size(); ++i)
        if (times[i] < 0.0 || times[i] > 2.0)
            throw Error("dataset", "sample time " + std::to_string(times[i]) + " outside [0, 2] s");

    const Disturbance u{dP7};
    const auto stages = build_event_stages(model, u);
    const ReducedSystem& intact = stages[0].system;

    SystemState guess;
    guess.delta = VectorXd::Zero(intact.n_bus());
    guess.omega = VectorXd::Constant(intact.n_gen, intact.omega0);

    SolverSettings settings;
    settings.rtol = rtol;
    settings.atol = rtol;
    settings.h_init = 1e-3;
    settings.max_steps = 2'000'000;

    auto scenario_error = [&](const std::string& what, const std::string& inner) {
        return Error("dataset", "scenario dP7=" + std::to_string(dP7) + " " + what + ": " + inner);
    };

    VectorXd x;
    try {
        x = equilibrium_solve(intact, Disturbance{0.0}, guess).state.flatten();
    } catch (const Error& e) {
        throw scenario_error("base equilibrium", e.what());
    }

    // Disturbance and fault stages run on absolute time; the post-trip stage
    // is re-timed to t = 0 at clearing.
    double t = 0.0;
    for (std::size_t s = 0; s + 1 < stages.size(); ++s) {
        const ReducedSystem& sys = stages[s].system;
        auto rhs = [&](double, const VectorXd& xx, VectorXd& dx) {
            dx = swing_rhs_flat(xx, u, sys);
        };
        auto res = integrate_adaptive(rhs, x, t, t + stages[s].duration, settings);
        if (!res.ok)
            throw scenario_error(std::string("stage ") + to_string(stages[s].label), res.error);
        x = res.trajectory.states().col(res.trajectory.states().cols() - 1);
        t += stages[s].duration;
    }

    const ReducedSystem& post = stages.back().system;
    auto rhs_post = [&](double, const VectorXd& xx, VectorXd& dx) {
        dx = swing_rhs_flat(xx, u, post);
    };
    const double t_end = times.maxCoeff();
    TrajectoryRecord rec;
    rec.dP7 = dP7;
    rec.x0 = x;
    rec.times = times;
    if (t_end > 0.0) {
        auto res = integrate_adaptive(rhs_post, x, 0.0, t_end, settings);
        if (!res.ok) throw scenario_error("post-trip stage", res.error);
        rec.states = res.trajectory.sample(times).transpose();
    } else {
        rec.states.resize(times.size(), x.size());
        for (Eigen::Index i = 0; i < times.size(); ++i) rec.states.row(i) = x.transpose();
    }
    return rec;
}

int worker_count(int jobs) {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("SWINGPINN_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return std::max(1, std::min(n, jobs));
}

Database::Database(std::filesystem::path dir, SystemModel model, double rtol)
    : dir_(std::move(dir)), model_(std::move(model)), rtol_(rtol) {
    std::filesystem::create_directories(dir_);
    const auto meta_path = dir_ / "meta.json";
    nlohmann::json meta;
    meta["format"] = "swingpinn-db-1";
    meta["config_digest"] = model_.config_digest;
    meta["rtol"] = rtol_;
    if (std::filesystem::exists(meta_path)) {
        std::ifstream in(meta_path);
        nlohmann::json existing;
        in >> existing;
        if (existing != meta)
            throw Error("dataset", "database at " + dir_.string() +
                                       " was generated from a different configuration");
    } else {
        std::ofstream out(meta_path);
        out << meta.dump(2) << "\n";
    }
    read_manifest();
}

std::string Database::scenario_hash(double dP7) const {
    return hex64(fnv1a64(model_.config_digest + ":" + format_double(dP7) + ":" +
                         format_double(rtol_)));
}

void Database::read_manifest() {
    rows_.clear();
    index_.clear();
    const auto path = dir_ / "manifest.csv";
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestRow row;
        std::string field;
        std::getline(ss, field, ',');
        row.dP7 = std::strtod(field.c_str(), nullptr);
        std::getline(ss, row.pre_hash, ',');
        std::getline(ss, row.file, ',');
        std::getline(ss, field, ',');
        row.n_samples = std::atoll(field.c_str());
        std::getline(ss, row.status);
        index_[to_micro(row.dP7, "manifest dP7")] = rows_.size();
        rows_.push_back(std::move(row));
    }
}

void Database::write_manifest() const {
    const auto path = dir_ / "manifest.csv";
    std::ofstream out(path, std::ios::trunc);
    out << "dP7,pre_hash,file,n_samples,status\n";
    for (const auto& row : rows_)
        out << format_double(row.dP7) << "," << row.pre_hash << "," << row.file << ","
            << row.n_samples << "," << row.status << "\n";
}

bool Database::has(double dP7) const {
    const auto it = index_.find(to_micro(dP7, "dP7"));
    return it != index_.end() && rows_[it->second].status == "ok";
}

std::vector<double> Database::stored_disturbances() const {
    std::vector<double> out;
    for (const auto& row : rows_)
        if (row.status == "ok") out.push_back(row.dP7);
    std::sort(out.begin(), out.end());
    return out;
}

TrajectoryRecord Database::load(double dP7) const {
    const auto it = index_.find(to_micro(dP7, "dP7"));
    if (it == index_.end())
        throw Error("dataset", "no stored trajectory for dP7=" + format_double(dP7));
    const ManifestRow& row = rows_[it->second];
    if (row.status != "ok")
        throw Error("dataset", "trajectory for dP7=" + format_double(dP7) + " " + row.status);
    return read_record(dir_ / row.file);
}

int Database::ensure(const std::vector<double>& dp7_values,
                     const Eigen::Ref<const VectorXd>& times) {
    // Canonical micro-second time keys keep differently-derived grids mergeable.
    std::vector<std::int64_t> wanted_us(static_cast<std::size_t>(times.size()));
    for (Eigen::Index i = 0; i < times.size(); ++i)
        wanted_us[static_cast<std::size_t>(i)] = to_micro(times[i], "sample time");

    struct Job {
        double dP7 = 0.0;
        VectorXd times;
    };
    std::vector<Job> jobs;
    for (double dp : dp7_values) {
        const std::int64_t key = to_micro(dp, "dP7");
        std::set<std::int64_t> union_us(wanted_us.begin(), wanted_us.end());
        const auto it = index_.find(key);
        if (it != index_.end() && rows_[it->second].status == "ok") {
            const TrajectoryRecord existing = read_record(dir_ / rows_[it->second].file);
            bool covered = true;
            std::set<std::int64_t> have;
            for (Eigen::Index i = 0; i < existing.times.size(); ++i)
                have.insert(to_micro(existing.times[i], "stored time"));
            for (std::int64_t t : wanted_us)
                if (!have.count(t)) covered = false;
            if (covered) continue;
            union_us.insert(have.begin(), have.end());
        }
        Job job;
        job.dP7 = dp;
        job.times.resize(static_cast<Eigen::Index>(union_us.size()));
        Eigen::Index i = 0;
        for (std::int64_t t : union_us) job.times[i++] = static_cast<double>(t) * 1e-6;
        jobs.push_back(std::move(job));
    }
    if (jobs.empty()) return 0;

    struct Outcome {
        TrajectoryRecord record;
        std::string error;
    };
    std::vector<Outcome> outcomes(jobs.size());
    const int workers = worker_count(static_cast<int>(jobs.size()));
    std::atomic<std::size_t> next{0};
    auto run = [&]() {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            try {
                outcomes[j].record = simulate_scenario(model_, jobs[j].dP7, jobs[j].times, rtol_);
            } catch (const std::exception& e) {
                outcomes[j].error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();

    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const std::int64_t key = to_micro(jobs[j].dP7, "dP7");
        ManifestRow row;
        row.dP7 = jobs[j].dP7;
        row.pre_hash = scenario_hash(jobs[j].dP7);
        char name[32];
        std::snprintf(name, sizeof(name), "dp7_%07lld.bin", static_cast<long long>(key));
        row.file = name;
        if (outcomes[j].error.empty()) {
            write_record(dir_ / row.file, outcomes[j].record);
            row.n_samples = outcomes[j].record.times.size();
            row.status = "ok";
        } else {
            row.n_samples = 0;
            std::string reason = outcomes[j].error;
            std::replace(reason.begin(), reason.end(), ',', ';');
            std::replace(reason.begin(), reason.end(), '\n', ' ');
            row.status = "failed:" + reason;
        }
        const auto it = index_.find(key);
        if (it != index_.end()) {
            rows_[it->second] = row;
        } else {
            index_[key] = rows_.size();
            rows_.push_back(row);
        }
    }

    std::sort(rows_.begin(), rows_.end(),
              [](const ManifestRow& a, const ManifestRow& b) { return a.dP7 < b.dP7; });
    index_.clear();
    for (std::size_t i = 0; i < rows_.size(); ++i) index_[to_micro(rows_[i].dP7, "dP7")] = i;
    write_manifest();
    return static_cast<int>(jobs.size());
}

int build_database(Database& db, int n_traj, int n_time) {
    const VectorXd dp = even_grid(0.0, 6.0, n_traj);
    const VectorXd tt = even_grid(0.0, 2.0, n_time);
    return db.ensure(std::vector<double>(dp.data(), dp.data() + dp.size()), tt);
}

namespace {

void check_granularity(double span_lo, double span_hi, int n, double granule, const char* axis) {
    if (n == 1) return;
    const std::int64_t span = to_micro(span_hi, "grid bound") - to_micro(span_lo, "grid bound");
    const std::int64_t granule_u = to_micro(granule, "granularity");
    if (span % (n - 1) != 0 || (span / (n - 1)) % granule_u != 0) {
        std::ostringstream msg;
        msg << axis << " spacing for " << n << " points over [" << span_lo << ", " << span_hi
            << "] is not representable on the " << granule << " granularity";
        throw Error("dataset", msg.str());
    }
}

LabelledSet assemble(Database& db, const VectorXd& dp, const VectorXd& tt) {
    db.ensure(std::vector<double>(dp.data(), dp.data() + dp.size()), tt);

    const int n = static_cast<int>(dp.size() * tt.size());
    LabelledSet out;
    int n_state = 0;
    int col = 0;
    for (Eigen::Index i = 0; i < dp.size(); ++i) {
        const TrajectoryRecord rec = db.load(dp[i]);
        if (col == 0) {
            n_state = static_cast<int>(rec.states.cols());
            out.inputs.resize(2, n);
            out.labels.resize(n_state, n);
            out.x0.resize(n_state, n);
        }
        // map requested times onto the stored grid
        std::map<std::int64_t, Eigen::Index> stored;
        for (Eigen::Index r = 0; r < rec.times.size(); ++r)
            stored[std::llround(rec.times[r] * 1e6)] = r;
        for (Eigen::Index j = 0; j < tt.size(); ++j) {
            const auto it = stored.find(std::llround(tt[j] * 1e6));
            if (it == stored.end())
                throw Error("dataset", "stored trajectory lacks requested sample time");
            out.inputs(0, col) = tt[j];
            out.inputs(1, col) = dp[i];
            out.labels.col(col) = rec.states.row(it->second).transpose();
            out.x0.col(col) = rec.x0;
            ++col;
        }
    }
    return out;
}

}  // namespace

LabelledSet select_training_subset(Database& db, const GridSpec& spec) {
    if (spec.n_traj < 1 || spec.n_time < 1)
        throw Error("dataset", "grid spec counts must be >= 1");
    check_granularity(spec.dp_min, spec.dp_max, spec.n_traj, 0.002, "disturbance");
    check_granularity(spec.t_min, spec.t_max, spec.n_time, 0.001, "time");
    const VectorXd dp = even_grid(spec.dp_min, spec.dp_max, spec.n_traj);
    const VectorXd tt = even_grid(spec.t_min, spec.t_max, spec.n_time);
    return assemble(db, dp, tt);
}

LabelledSet validation_grid(Database& db) {
    // Cell centers of a 24 x 40 partition of [0,6] x [0,2].
    VectorXd dp(24), tt(40);
    for (int i = 0; i < 24; ++i) dp[i] = (static_cast<double>(i) + 0.5) * 6.0 / 24.0;
    for (int j = 0; j < 40; ++j) tt[j] = (static_cast<double>(j) + 0.5) * 2.0 / 40.0;
    return assemble(db, dp, tt);
}

LabelledSet test_grid(Database& db, int n_traj, int n_time) {
    const VectorXd dp = even_grid(0.0, 6.0, n_traj);
    const VectorXd tt = even_grid(0.0, 2.0, n_time);
    return assemble(db, dp, tt);
}

double overlap_fraction(const MatrixXd& a, const MatrixXd& b) {
    if (a.cols() == 0) return 0.0;
    std::set<std::pair<std::int64_t, std::int64_t>> in_b;
    for (Eigen::Index c = 0; c < b.cols(); ++c)
        in_b.insert({std::llround(b(0, c) * 1e6), std::llround(b(1, c) * 1e6)});
    Eigen::Index hits = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c)
        if (in_b.count({std::llround(a(0, c) * 1e6), std::llround(a(1, c) * 1e6)})) ++hits;
    return static_cast<double>(hits) / static_cast<double>(a.cols());
}

}  // namespace swingpinn
