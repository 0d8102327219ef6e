#include "swingpinn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace swingpinn {

namespace {

void require(bool condition, const std::string& message) {
    if (!condition) throw Error("mlp", message);
}

std::vector<std::pair<int, int>> layer_shapes(const NetworkConfig& c) {
    require(c.n_hidden_layers >= 1 && c.width >= 1 && c.input_dim >= 1 && c.output_dim >= 1,
            "network dimensions must be positive");
    std::vector<std::pair<int, int>> shapes;
    int in = c.input_dim;
    for (int k = 0; k < c.n_hidden_layers; ++k) {
        shapes.emplace_back(c.width, in);
        in = c.width;
    }
    shapes.emplace_back(c.output_dim, in);
    return shapes;
}

}  // namespace

MlpParameters MlpParameters::zeros(const NetworkConfig& config) {
    MlpParameters p;
    for (const auto& [rows, cols] : layer_shapes(config)) {
        p.W.push_back(MatrixXd::Zero(rows, cols));
        p.b.push_back(VectorXd::Zero(rows));
    }
    return p;
}

Eigen::Index MlpParameters::parameter_count() const {
    Eigen::Index n = 0;
    for (std::size_t k = 0; k < W.size(); ++k) n += W[k].size() + b[k].size();
    return n;
}

VectorXd MlpParameters::to_flat() const {
    VectorXd flat(parameter_count());
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < W.size(); ++k) {
        flat.segment(pos, W[k].size()) = Eigen::Map<const VectorXd>(W[k].data(), W[k].size());
        pos += W[k].size();
        flat.segment(pos, b[k].size()) = b[k];
        pos += b[k].size();
    }
    return flat;
}

void MlpParameters::from_flat(const Eigen::Ref<const VectorXd>& flat) {
    require(flat.size() == parameter_count(), "flat parameter vector size mismatch");
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < W.size(); ++k) {
        Eigen::Map<VectorXd>(W[k].data(), W[k].size()) = flat.segment(pos, W[k].size());
        pos += W[k].size();
        b[k] = flat.segment(pos, b[k].size());
        pos += b[k].size();
    }
}

void MlpParameters::set_zero() {
    for (auto& w : W) w.setZero();
    for (auto& v : b) v.setZero();
}

MatrixXd Normalization::normalize_outputs(const Eigen::Ref<const MatrixXd>& physical) const {
    return (physical.colwise() - out_shift).array().colwise() / out_scale.array();
}

MatrixXd Normalization::denormalize_outputs(const Eigen::Ref<const MatrixXd>& normalized) const {
    return (normalized.array().colwise() * out_scale.array()).colwise() + out_shift.array();
}

Normalization identity_normalization(int n_state) {
    Normalization norm;
    norm.in_shift = {0.0, 0.0};
    norm.in_scale = {1.0, 1.0};
    norm.out_shift = VectorXd::Zero(n_state);
    norm.out_scale = VectorXd::Ones(n_state);
    return norm;
}

namespace {

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

Normalization make_normalization(const Eigen::Ref<const MatrixXd>& labels) {
    require(labels.cols() >= 1, "normalization needs at least one label point");
    Normalization norm;
    const int n = static_cast<int>(labels.rows());
    norm.out_shift.resize(n);
    norm.out_scale.resize(n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> v(static_cast<std::size_t>(labels.cols()));
        for (Eigen::Index j = 0; j < labels.cols(); ++j) v[static_cast<std::size_t>(j)] = labels(i, j);
        norm.out_shift[i] = quantile(v, 0.5);
        const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
        norm.out_scale[i] = iqr > 1e-12 ? iqr : 1.0;
    }
    return norm;
}

MlpParameters init_params(const NetworkConfig& config, std::uint64_t seed) {
    MlpParameters p = MlpParameters::zeros(config);
    std::mt19937_64 rng(seed);
    for (auto& w : p.W) {
        const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
    }
    return p;
}

ForwardTrace forward_trace(const MlpParameters& params, const NetworkConfig& config,
                           const Normalization& norm, const Eigen::Ref<const MatrixXd>& inputs,
                           bool with_tangent) {
    require(inputs.rows() == config.input_dim, "input row count mismatch");
    require(static_cast<int>(params.W.size()) == config.n_hidden_layers + 1,
            "parameter layer count mismatch");
    require(inputs.allFinite(), "non-finite network input");

    const Eigen::Index n = inputs.cols();
    const int K = config.n_hidden_layers;

    ForwardTrace trace;
    trace.has_tangent = with_tangent;
    trace.Z.resize(static_cast<std::size_t>(K) + 1);
    if (with_tangent) {
        trace.Z_dot.resize(static_cast<std::size_t>(K) + 1);
        trace.S_dot.resize(static_cast<std::size_t>(K));
    }

    trace.Z[0] = (inputs.colwise() - norm.in_shift).array().colwise() / norm.in_scale.array();
    if (with_tangent) {
        trace.Z_dot[0] = MatrixXd::Zero(config.input_dim, n);
        trace.Z_dot[0].row(0).setConstant(1.0 / norm.in_scale[0]);
    }

    for (int k = 0; k < K; ++k) {
        MatrixXd s = params.W[static_cast<std::size_t>(k)] * trace.Z[static_cast<std::size_t>(k)];
        s.colwise() += params.b[static_cast<std::size_t>(k)];
        trace.Z[static_cast<std::size_t>(k) + 1] = s.array().tanh();
        if (with_tangent) {
            trace.S_dot[static_cast<std::size_t>(k)] =
                params.W[static_cast<std::size_t>(k)] * trace.Z_dot[static_cast<std::size_t>(k)];
            trace.Z_dot[static_cast<std::size_t>(k) + 1] =
                (1.0 - trace.Z[static_cast<std::size_t>(k) + 1].array().square()) *
                trace.S_dot[static_cast<std::size_t>(k)].array();
        }
    }

    const std::size_t out = static_cast<std::size_t>(K);
    trace.Yn = params.W[out] * trace.Z[out];
    trace.Yn.colwise() += params.b[out];
    if (with_tangent) trace.Yn_dot = params.W[out] * trace.Z_dot[out];
    return trace;
}

MatrixXd forward(const MlpParameters& params, const NetworkConfig& config,
                 const Normalization& norm, const Eigen::Ref<const MatrixXd>& inputs) {
    const ForwardTrace trace = forward_trace(params, config, norm, inputs, false);
    return norm.denormalize_outputs(trace.Yn);
}

TimeGradResult forward_time_grad(const MlpParameters& params, const NetworkConfig& config,
                                 const Normalization& norm,
                                 const Eigen::Ref<const MatrixXd>& inputs) {
    const ForwardTrace trace = forward_trace(params, config, norm, inputs, true);
    TimeGradResult result;
    result.x = norm.denormalize_outputs(trace.Yn);
    result.dx_dt = trace.Yn_dot.array().colwise() * norm.out_scale.array();
    return result;
}

void backward_trace(const MlpParameters& params, const NetworkConfig& config,
                    const ForwardTrace& trace, const Eigen::Ref<const MatrixXd>& grad_Yn,
                    const Eigen::Ref<const MatrixXd>& grad_Yn_dot, MlpParameters& grads) {
    const int K = config.n_hidden_layers;
    const std::size_t out = static_cast<std::size_t>(K);
    const bool with_tangent = trace.has_tangent && grad_Yn_dot.size() > 0;

    grads.W[out].noalias() += grad_Yn * trace.Z[out].transpose();
    grads.b[out] += grad_Yn.rowwise().sum();
    MatrixXd gz = params.W[out].transpose() * grad_Yn;
    MatrixXd gzd;
    if (with_tangent) {
        grads.W[out].noalias() += grad_Yn_dot * trace.Z_dot[out].transpose();
        gzd = params.W[out].transpose() * grad_Yn_dot;
    }

    for (int k = K - 1; k >= 0; --k) {
        const std::size_t kk = static_cast<std::size_t>(k);
        const MatrixXd& a = trace.Z[kk + 1];
        const Eigen::ArrayXXd phi1 = 1.0 - a.array().square();
        MatrixXd gs, gsd;
        if (with_tangent) {
            const Eigen::ArrayXXd phi2 = -2.0 * a.array() * phi1;
            gs = (gz.array() * phi1 + gzd.array() * phi2 * trace.S_dot[kk].array()).matrix();
            gsd = (gzd.array() * phi1).matrix();
        } else {
            gs = (gz.array() * phi1).matrix();
        }

        grads.W[kk].noalias() += gs * trace.Z[kk].transpose();
        grads.b[kk] += gs.rowwise().sum();
        if (with_tangent) grads.W[kk].noalias() += gsd * trace.Z_dot[kk].transpose();

        if (k > 0) {
            gz = params.W[kk].transpose() * gs;
            if (with_tangent) gzd = params.W[kk].transpose() * gsd;
        }
    }
}

const char* to_string(LossMode mode) {
    switch (mode) {
        case LossMode::NN: return "nn";
        case LossMode::DtNN: return "dtnn";
        case LossMode::PINN: return "pinn";
    }
    return "?";
}

LossMode loss_mode_from_string(const std::string& name) {
    if (name == "nn" || name == "NN") return LossMode::NN;
    if (name == "dtnn" || name == "dtNN") return LossMode::DtNN;
    if (name == "pinn" || name == "PINN") return LossMode::PINN;
    throw Error("mlp", "unknown loss mode '" + name + "'");
}

LossWeightTable make_loss_weights(int n_x, int n_f, int n_gen, int n_load) {
    require(n_x >= 1 && n_f >= 1, "weight table counts must be positive");
    const int n_state = n_gen + n_load + n_gen;
    LossWeightTable t;
    t.k = 2.2e4 * static_cast<double>(n_f) / static_cast<double>(n_x);
    t.lambda_x.resize(n_state);
    t.lambda_dt.resize(n_state);
    t.lambda_f.resize(n_state);
    for (int i = 0; i < n_gen; ++i) {  // generator angles
        t.lambda_x[i] = 1.0 * t.k;
        t.lambda_dt[i] = 0.5 * t.k;
        t.lambda_f[i] = 1000.0;
    }
    for (int i = n_gen; i < n_gen + n_load; ++i) {  // load angles
        t.lambda_x[i] = 1.0 * t.k;
        t.lambda_dt[i] = 0.04 * t.k;
        t.lambda_f[i] = 3.0;
    }
    for (int i = n_gen + n_load; i < n_state; ++i) {  // generator frequencies
        t.lambda_x[i] = 2.0 * t.k;
        t.lambda_dt[i] = 0.12 * t.k;
        t.lambda_f[i] = 5.0;
    }
    return t;
}

MatrixXd rhs_at_points(const Eigen::Ref<const MatrixXd>& states,
                       const Eigen::Ref<const VectorXd>& dp7, const ReducedSystem& sys) {
    require(states.cols() == dp7.size(), "state/disturbance count mismatch");
    MatrixXd f(states.rows(), states.cols());
    for (Eigen::Index j = 0; j < states.cols(); ++j)
        f.col(j) = swing_rhs_flat(states.col(j), Disturbance{dp7[j]}, sys);
    return f;
}

namespace {

void check_finite_terms(const LossTerms& terms) {
    for (int i = 0; i < terms.L_x.size(); ++i)
        if (!std::isfinite(terms.L_x[i]))
            throw Error("mlp", "non-finite data loss for state " + std::to_string(i));
    for (int i = 0; i < terms.L_dt.size(); ++i)
        if (!std::isfinite(terms.L_dt[i]))
            throw Error("mlp", "non-finite derivative loss for state " + std::to_string(i));
    for (int i = 0; i < terms.L_f.size(); ++i)
        if (!std::isfinite(terms.L_f[i]))
            throw Error("mlp", "non-finite physics loss for state " + std::to_string(i));
}

/// Shared forward/loss/seed logic; when `grads` is non-null runs the reverse
/// passes as well.
LossTerms loss_core(const MlpParameters& params, const NetworkConfig& config,
                    const Normalization& norm, const LossBatch& batch, LossMode mode,
                    const LossWeightTable* table, MlpParameters* grads) {
    const int n_state = config.output_dim;
    const Eigen::Index n_x = batch.data_inputs.cols();
    require(n_x >= 1, "data batch is empty");
    require(batch.data_labels.cols() == n_x, "label column count mismatch");
    if (mode != LossMode::NN)
        require(batch.data_f.cols() == n_x, "rhs-at-label column count mismatch");
    if (grads != nullptr) require(table != nullptr, "gradient evaluation needs a weight table");

    LossTerms terms;
    terms.L_x = VectorXd::Zero(n_state);
    terms.L_dt = VectorXd::Zero(n_state);
    terms.L_f = VectorXd::Zero(n_state);

    const bool needs_tangent = mode != LossMode::NN;

    // Data pass: L_x on normalized outputs, L_dt against the rhs at labels.
    const ForwardTrace data_trace =
        forward_trace(params, config, norm, batch.data_inputs, needs_tangent);
    const MatrixXd labels_n = norm.normalize_outputs(batch.data_labels);
    const MatrixXd err = data_trace.Yn - labels_n;
    terms.L_x = err.array().square().rowwise().sum() / static_cast<double>(n_x);

    MatrixXd r_dt;
    if (needs_tangent) {
        const MatrixXd dxhat = data_trace.Yn_dot.array().colwise() * norm.out_scale.array();
        r_dt = batch.data_f - dxhat;
        terms.L_dt = r_dt.array().square().rowwise().sum() / static_cast<double>(n_x);
    }

    // Collocation pass: residual of the dynamics at the prediction.
    ForwardTrace colloc_trace;
    MatrixXd r_f;                       // residuals per collocation point
    std::vector<MatrixXd> jacobians;    // d(rhs)/d(state) per point
    const Eigen::Index n_f = batch.colloc_inputs.cols();
    if (mode == LossMode::PINN) {
        require(n_f >= 1, "PINN mode needs collocation points");
        require(batch.system != nullptr, "PINN mode needs the system dynamics");
        colloc_trace = forward_trace(params, config, norm, batch.colloc_inputs, true);
        const MatrixXd xhat = norm.denormalize_outputs(colloc_trace.Yn);
        const MatrixXd dxhat = colloc_trace.Yn_dot.array().colwise() * norm.out_scale.array();
        r_f.resize(n_state, n_f);
        if (grads != nullptr) jacobians.resize(static_cast<std::size_t>(n_f));
        for (Eigen::Index c = 0; c < n_f; ++c) {
            const Disturbance u{batch.colloc_inputs(1, c)};
            r_f.col(c) = swing_rhs_flat(xhat.col(c), u, *batch.system) - dxhat.col(c);
            if (grads != nullptr)
                jacobians[static_cast<std::size_t>(c)] =
                    swing_rhs_jacobian(xhat.col(c), *batch.system);
        }
        terms.L_f = r_f.array().square().rowwise().sum() / static_cast<double>(n_f);
    }

    check_finite_terms(terms);
    if (grads == nullptr) return terms;

    // Reverse passes. Seeds are the exact partials of the weighted total loss.
    {
        MatrixXd gy = (2.0 / static_cast<double>(n_x)) *
                      (err.array().colwise() * table->lambda_x.array()).matrix();
        MatrixXd gyd;
        if (needs_tangent)
            gyd = (-2.0 / static_cast<double>(n_x)) *
                  (r_dt.array().colwise() * (table->lambda_dt.array() * norm.out_scale.array()))
                      .matrix();
        backward_trace(params, config, data_trace, gy, needs_tangent ? gyd : MatrixXd(), *grads);
    }
    if (mode == LossMode::PINN) {
        MatrixXd gyd = (-2.0 / static_cast<double>(n_f)) *
                       (r_f.array().colwise() * (table->lambda_f.array() * norm.out_scale.array()))
                           .matrix();
        MatrixXd gy(n_state, n_f);
        for (Eigen::Index c = 0; c < n_f; ++c) {
            const VectorXd weighted = table->lambda_f.array() * r_f.col(c).array();
            gy.col(c) = (2.0 / static_cast<double>(n_f)) *
                        (jacobians[static_cast<std::size_t>(c)].transpose() * weighted).array() *
                        norm.out_scale.array();
        }
        backward_trace(params, config, colloc_trace, gy, gyd, *grads);
    }
    return terms;
}

}  // namespace

double total_loss(const LossTerms& terms, const LossWeightTable& table, LossMode mode) {
    double total = table.lambda_x.dot(terms.L_x);
    if (mode != LossMode::NN) total += table.lambda_dt.dot(terms.L_dt);
    if (mode == LossMode::PINN) total += table.lambda_f.dot(terms.L_f);
    return total;
}

LossTerms loss_terms(const MlpParameters& params, const NetworkConfig& config,
                     const Normalization& norm, const LossBatch& batch, LossMode mode) {
    return loss_core(params, config, norm, batch, mode, nullptr, nullptr);
}

LossTerms loss_gradients(const MlpParameters& params, const NetworkConfig& config,
                         const Normalization& norm, const LossBatch& batch, LossMode mode,
                         const LossWeightTable& table, MlpParameters& grads) {
    grads = MlpParameters::zeros(config);
    return loss_core(params, config, norm, batch, mode, &table, &grads);
}

namespace {

constexpr char kCkptMagic[8] = {'S', 'P', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

void put_vector(std::ostream& out, const VectorXd& v) {
    put<std::int64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(sizeof(double) * v.size()));
}

VectorXd get_vector(std::istream& in) {
    const std::int64_t n = get<std::int64_t>(in);
    VectorXd v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * n));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("mlp", "cannot write checkpoint " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    put<std::int32_t>(out, 1);  // version
    put<std::int32_t>(out, ckpt.config.n_hidden_layers);
    put<std::int32_t>(out, ckpt.config.width);
    put<std::int32_t>(out, ckpt.config.input_dim);
    put<std::int32_t>(out, ckpt.config.output_dim);
    put<std::int32_t>(out, static_cast<std::int32_t>(ckpt.mode));
    put<std::uint64_t>(out, ckpt.seed);
    put<std::int64_t>(out, ckpt.epoch);
    put<double>(out, ckpt.validation_loss);
    put_vector(out, VectorXd(ckpt.norm.in_shift));
    put_vector(out, VectorXd(ckpt.norm.in_scale));
    put_vector(out, ckpt.norm.out_shift);
    put_vector(out, ckpt.norm.out_scale);
    put_vector(out, ckpt.params.to_flat());
    if (!out) throw Error("mlp", "short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("mlp", "cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw Error("mlp", "bad checkpoint magic in " + path);
    const std::int32_t version = get<std::int32_t>(in);
    if (version != 1)
        throw Error("mlp", "unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config.n_hidden_layers = get<std::int32_t>(in);
    ckpt.config.width = get<std::int32_t>(in);
    ckpt.config.input_dim = get<std::int32_t>(in);
    ckpt.config.output_dim = get<std::int32_t>(in);
    ckpt.mode = static_cast<LossMode>(get<std::int32_t>(in));
    ckpt.seed = get<std::uint64_t>(in);
    ckpt.epoch = get<std::int64_t>(in);
    ckpt.validation_loss = get<double>(in);
    const VectorXd in_shift = get_vector(in);
    const VectorXd in_scale = get_vector(in);
    ckpt.norm.in_shift = {in_shift[0], in_shift[1]};
    ckpt.norm.in_scale = {in_scale[0], in_scale[1]};
    ckpt.norm.out_shift = get_vector(in);
    ckpt.norm.out_scale = get_vector(in);
    ckpt.params = MlpParameters::zeros(ckpt.config);
    ckpt.params.from_flat(get_vector(in));
    if (!in) throw Error("mlp", "truncated checkpoint " + path);
    return ckpt;
}

}  // namespace swingpinn
