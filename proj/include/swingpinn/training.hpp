#pragma once

#include "swingpinn/dataset.hpp"
#include "swingpinn/mlp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace swingpinn {

struct TrainSettings {
    LossMode mode = LossMode::PINN;
    int max_epochs = 1000;
    double lr_init = 0.025;
    double lr_decay_orders = 1.5;  // lr(last epoch) = lr_init * 10^-orders
    int patience = 200;
    std::uint64_t seed = 0;
};

/// Exponential decay: lr_init at epoch 1 down to lr_init * 10^-orders at
/// max_epochs.
double learning_rate(const TrainSettings& settings, int epoch);

struct EpochRecord {
    int epoch = 0;         // 1-based
    double loss_x = 0.0;   // weighted data term, sum_i lambda_x L_x
    double loss_dt = 0.0;  // weighted derivative term
    double loss_f = 0.0;   // weighted physics term
    double total = 0.0;
    double validation = 0.0;  // weighted L_x on the validation grid
    double lr = 0.0;
    double ms_per_epoch = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_validation = 0.0;
    std::string stop_reason;  // max_epochs | patience | divergence
};

struct TrainInputs {
    LabelledSet training;
    CollocationGrid collocation;  // used in PINN mode; sizes k in all modes
    LabelledSet validation;
    const ReducedSystem* system = nullptr;  // post-trip dynamics
};

struct TrainResult {
    TrainReport report;
    Checkpoint best;
};

/// Spec-facing aliases of the loss operations (shared implementation with the
/// gradient path).
LossTerms compute_loss_terms(const MlpParameters& params, const NetworkConfig& config,
                             const Normalization& norm, const LossBatch& batch, LossMode mode);

/// Full-batch Adam on the weighted total loss with exponential learning-rate
/// decay and best-validation early stopping. Deterministic given the seed.
/// `table_override` replaces the Table-derived weights when non-null.
TrainResult train(const TrainSettings& settings, const NetworkConfig& config,
                  const TrainInputs& inputs, const LossWeightTable* table_override = nullptr);

/// One Adam step (beta1 = 0.9, beta2 = 0.999, eps = 1e-8); `step` is 1-based.
void adam_step(MlpParameters& params, const MlpParameters& grads, MlpParameters& m,
               MlpParameters& v, double lr, int step);

void write_train_report_csv(const std::string& path, const TrainReport& report);
TrainReport read_train_report_csv(const std::string& path);

}  // namespace swingpinn
