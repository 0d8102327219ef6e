#include "swingpinn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace swingpinn {

double learning_rate(const TrainSettings& settings, int epoch) {
    if (settings.max_epochs <= 1) return settings.lr_init;
    const double frac = static_cast<double>(epoch - 1) / static_cast<double>(settings.max_epochs - 1);
    return settings.lr_init * std::pow(10.0, -settings.lr_decay_orders * frac);
}

void adam_step(MlpParameters& params, const MlpParameters& grads, MlpParameters& m,
               MlpParameters& v, double lr, int step) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    for (std::size_t k = 0; k < params.W.size(); ++k) {
        m.W[k] = beta1 * m.W[k] + (1.0 - beta1) * grads.W[k];
        v.W[k] = (beta2 * v.W[k].array() + (1.0 - beta2) * grads.W[k].array().square()).matrix();
        params.W[k].array() -=
            lr * (m.W[k].array() / bc1) / ((v.W[k].array() / bc2).sqrt() + eps);

        m.b[k] = beta1 * m.b[k] + (1.0 - beta1) * grads.b[k];
        v.b[k] = (beta2 * v.b[k].array() + (1.0 - beta2) * grads.b[k].array().square()).matrix();
        params.b[k].array() -=
            lr * (m.b[k].array() / bc1) / ((v.b[k].array() / bc2).sqrt() + eps);
    }
}

LossTerms compute_loss_terms(const MlpParameters& params, const NetworkConfig& config,
                             const Normalization& norm, const LossBatch& batch, LossMode mode) {
    return loss_terms(params, config, norm, batch, mode);
}

namespace {

double validation_loss(const MlpParameters& params, const NetworkConfig& config,
                       const Normalization& norm, const LabelledSet& validation,
                       const LossWeightTable& table) {
    const ForwardTrace trace = forward_trace(params, config, norm, validation.inputs, false);
    const MatrixXd err = trace.Yn - norm.normalize_outputs(validation.labels);
    const VectorXd per_state =
        err.array().square().rowwise().sum() / static_cast<double>(validation.inputs.cols());
    return table.lambda_x.dot(per_state);
}

}  // namespace

TrainResult train(const TrainSettings& settings, const NetworkConfig& config,
                  const TrainInputs& inputs, const LossWeightTable* table_override) {
    if (inputs.system == nullptr) throw Error("training", "missing system dynamics");
    if (inputs.training.inputs.cols() < 1) throw Error("training", "empty training set");
    if (inputs.validation.inputs.cols() < 1) throw Error("training", "empty validation set");

    const int n_x = static_cast<int>(inputs.training.inputs.cols());
    const int n_f = inputs.collocation.n_f > 0 ? inputs.collocation.n_f : 1025;
    const LossWeightTable table =
        table_override != nullptr
            ? *table_override
            : make_loss_weights(n_x, n_f, inputs.system->n_gen, inputs.system->n_load);

    const Normalization norm = make_normalization(inputs.training.labels);

    LossBatch batch;
    batch.data_inputs = inputs.training.inputs;
    batch.data_labels = inputs.training.labels;
    batch.data_f =
        rhs_at_points(inputs.training.labels, inputs.training.inputs.row(1), *inputs.system);
    batch.colloc_inputs = inputs.collocation.points;
    batch.system = inputs.system;

    MlpParameters params = init_params(config, settings.seed);
    MlpParameters grads = MlpParameters::zeros(config);
    MlpParameters m = MlpParameters::zeros(config);
    MlpParameters v = MlpParameters::zeros(config);

    TrainResult result;
    result.report.best_validation = std::numeric_limits<double>::infinity();
    MlpParameters best_params = params;

    for (int epoch = 1; epoch <= settings.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = learning_rate(settings, epoch);

        LossTerms terms;
        try {
            terms = loss_gradients(params, config, norm, batch, settings.mode, table, grads);
        } catch (const Error&) {
            result.report.stop_reason = "divergence";
            break;
        }
        rec.loss_x = table.lambda_x.dot(terms.L_x);
        rec.loss_dt = settings.mode != LossMode::NN ? table.lambda_dt.dot(terms.L_dt) : 0.0;
        rec.loss_f = settings.mode == LossMode::PINN ? table.lambda_f.dot(terms.L_f) : 0.0;
        rec.total = total_loss(terms, table, settings.mode);
        if (!std::isfinite(rec.total)) {
            result.report.stop_reason = "divergence";
            break;
        }

        adam_step(params, grads, m, v, rec.lr, epoch);
        rec.validation = validation_loss(params, config, norm, inputs.validation, table);

        const auto t1 = std::chrono::steady_clock::now();
        rec.ms_per_epoch = std::chrono::duration<double, std::milli>(t1 - t0).count();
        result.report.epochs.push_back(rec);

        if (rec.validation < result.report.best_validation) {
            result.report.best_validation = rec.validation;
            result.report.best_epoch = epoch;
            best_params = params;
        }
        if (epoch - result.report.best_epoch >= settings.patience) {
            result.report.stop_reason = "patience";
            break;
        }
    }
    if (result.report.stop_reason.empty()) result.report.stop_reason = "max_epochs";

    result.best.config = config;
    result.best.norm = norm;
    result.best.mode = settings.mode;
    result.best.seed = settings.seed;
    result.best.epoch = result.report.best_epoch;
    result.best.validation_loss = result.report.best_validation;
    result.best.params = best_params;
    return result;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_train_report_csv(const std::string& path, const TrainReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("training", "cannot write report " + path);
    out << "epoch,loss_x,loss_dt,loss_f,total,validation,lr,ms_per_epoch\n";
    for (const auto& r : report.epochs)
        out << r.epoch << "," << fmt(r.loss_x) << "," << fmt(r.loss_dt) << "," << fmt(r.loss_f)
            << "," << fmt(r.total) << "," << fmt(r.validation) << "," << fmt(r.lr) << ","
            << fmt(r.ms_per_epoch) << "\n";
    out << "# best_epoch=" << report.best_epoch << " best_validation="
        << fmt(report.best_validation) << " stop=" << report.stop_reason << "\n";
}

TrainReport read_train_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("training", "cannot open report " + path);
    TrainReport report;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line.substr(1));
            std::string token;
            while (ss >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = token.substr(0, eq);
                const std::string value = token.substr(eq + 1);
                if (key == "best_epoch") report.best_epoch = std::atoi(value.c_str());
                if (key == "best_validation") report.best_validation = std::strtod(value.c_str(), nullptr);
                if (key == "stop") report.stop_reason = value;
            }
            continue;
        }
        std::istringstream ss(line);
        EpochRecord r;
        char comma;
        ss >> r.epoch >> comma >> r.loss_x >> comma >> r.loss_dt >> comma >> r.loss_f >> comma >>
            r.total >> comma >> r.validation >> comma >> r.lr >> comma >> r.ms_per_epoch;
        report.epochs.push_back(r);
    }
    return report;
}

}  // namespace swingpinn
