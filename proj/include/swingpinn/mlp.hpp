#pragma once

#include "swingpinn/power_system.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace swingpinn {

struct NetworkConfig {
    int n_hidden_layers = 2;  // N_K
    int width = 150;          // N_L
    int input_dim = 2;        // (t, dP7)
    int output_dim = 10;
};

/// Layer weights and biases. W[k] maps layer k activations to layer k+1
/// pre-activations; the last entry is the linear output layer.
struct MlpParameters {
    std::vector<MatrixXd> W;
    std::vector<VectorXd> b;

    static MlpParameters zeros(const NetworkConfig& config);
    Eigen::Index parameter_count() const;
    VectorXd to_flat() const;
    void from_flat(const Eigen::Ref<const VectorXd>& flat);
    void set_zero();
};

/// Affine input/output maps applied at the network boundary. Inputs map to
/// [-1, 1] over the domain; outputs are standardized per state.
struct Normalization {
    Eigen::Vector2d in_shift{1.0, 3.0};
    Eigen::Vector2d in_scale{1.0, 3.0};
    VectorXd out_shift;
    VectorXd out_scale;  // strictly positive

    MatrixXd normalize_outputs(const Eigen::Ref<const MatrixXd>& physical) const;
    MatrixXd denormalize_outputs(const Eigen::Ref<const MatrixXd>& normalized) const;
};

/// Identity output map for n states.
Normalization identity_normalization(int n_state);

/// Median/IQR standardization of the outputs from a training label matrix
/// (one column per point). Degenerate spreads fall back to unit scale.
Normalization make_normalization(const Eigen::Ref<const MatrixXd>& labels);

/// Glorot-uniform weights, zero biases; fully determined by the seed.
MlpParameters init_params(const NetworkConfig& config, std::uint64_t seed);

/// Activations and time-tangents of one batched pass, retained for the
/// reverse passes. Column j of every matrix belongs to input point j.
struct ForwardTrace {
    std::vector<MatrixXd> Z;      // Z[0] = normalized inputs, Z[k] = hidden activations
    std::vector<MatrixXd> Z_dot;  // d/dt of Z (physical time), when traced
    std::vector<MatrixXd> S_dot;  // d/dt of hidden pre-activations, when traced
    MatrixXd Yn;                  // normalized outputs
    MatrixXd Yn_dot;              // d(Yn)/dt, when traced
    bool has_tangent = false;
};

ForwardTrace forward_trace(const MlpParameters& params, const NetworkConfig& config,
                           const Normalization& norm, const Eigen::Ref<const MatrixXd>& inputs,
                           bool with_tangent);

/// Physical-unit prediction for a batch of (t, dP7) columns.
MatrixXd forward(const MlpParameters& params, const NetworkConfig& config,
                 const Normalization& norm, const Eigen::Ref<const MatrixXd>& inputs);

struct TimeGradResult {
    MatrixXd x;      // physical outputs
    MatrixXd dx_dt;  // exact d(x)/d(physical t)
};

/// Prediction plus its exact time derivative through the composed map,
/// including both normalization boundaries.
TimeGradResult forward_time_grad(const MlpParameters& params, const NetworkConfig& config,
                                 const Normalization& norm,
                                 const Eigen::Ref<const MatrixXd>& inputs);

/// Reverse pass over a stored trace: accumulates d(loss)/d(W, b) into `grads`
/// given the loss gradients with respect to Yn and (optionally) Yn_dot.
void backward_trace(const MlpParameters& params, const NetworkConfig& config,
                    const ForwardTrace& trace, const Eigen::Ref<const MatrixXd>& grad_Yn,
                    const Eigen::Ref<const MatrixXd>& grad_Yn_dot, MlpParameters& grads);

enum class LossMode { NN, DtNN, PINN };

const char* to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& name);

/// Per-state loss weights (data, derivative, physics) with the shared scale k.
struct LossWeightTable {
    VectorXd lambda_x;
    VectorXd lambda_dt;
    VectorXd lambda_f;
    double k = 0.0;
};

/// Fixed balancing heuristic: k = 2.2e4 * N_f / N_x; per state group
/// (generator angles | load angles | generator frequencies):
/// lambda_x = (1, 1, 2) k, lambda_dt = (0.5, 0.04, 0.12) k,
/// lambda_f = (1000, 3, 5).
LossWeightTable make_loss_weights(int n_x, int n_f, int n_gen = 4, int n_load = 2);

/// Inputs of one loss evaluation. Data points carry labels and the
/// right-hand side precomputed at the labels; collocation points carry only
/// inputs and are judged against `system`'s dynamics at the prediction.
struct LossBatch {
    MatrixXd data_inputs;    // 2 x N_x
    MatrixXd data_labels;    // n_state x N_x
    MatrixXd data_f;         // n_state x N_x
    MatrixXd colloc_inputs;  // 2 x N_f (PINN mode)
    const ReducedSystem* system = nullptr;
};

/// rhs evaluated at each label column with that column's disturbance.
MatrixXd rhs_at_points(const Eigen::Ref<const MatrixXd>& states,
                       const Eigen::Ref<const VectorXd>& dp7, const ReducedSystem& sys);

struct LossTerms {
    VectorXd L_x;   // per state, normalized-output mean squared error
    VectorXd L_dt;  // physical-unit derivative mismatch at data points
    VectorXd L_f;   // physical-unit residual at collocation points
};

double total_loss(const LossTerms& terms, const LossWeightTable& table, LossMode mode);

/// Loss terms without gradients.
LossTerms loss_terms(const MlpParameters& params, const NetworkConfig& config,
                     const Normalization& norm, const LossBatch& batch, LossMode mode);

/// Exact gradient of the weighted total loss with respect to every weight and
/// bias, differentiating through the time derivative (second-order mixed
/// derivatives) and through the dynamics' dependence on the prediction.
/// Returns the loss terms of the same evaluation.
LossTerms loss_gradients(const MlpParameters& params, const NetworkConfig& config,
                         const Normalization& norm, const LossBatch& batch, LossMode mode,
                         const LossWeightTable& table, MlpParameters& grads);

/// Self-describing network snapshot.
struct Checkpoint {
    NetworkConfig config;
    Normalization norm;
    LossMode mode = LossMode::NN;
    std::uint64_t seed = 0;
    std::int64_t epoch = 0;
    double validation_loss = 0.0;
    MlpParameters params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace swingpinn
