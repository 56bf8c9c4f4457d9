#pragma once

#include "gridwarm/cgrf.hpp"

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace gridwarm {

enum class LossKind { surrogate, exact_nll };
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
    LossKind loss = LossKind::surrogate;
    int epochs = 200;
    int batch_size = 16;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int lr_period = 50;      // epochs between learning-rate cuts
    double lr_factor = 0.5;
    int patience = 20;       // epochs without validation improvement; 0 disables early stopping
    double grad_clip = 1.0;  // global gradient norm cap; 0 disables
    bool standardize = true;
    std::uint64_t seed = 0;
    int jobs = 1;
};

/// Throws Error when the config breaks its invariants.
void check_config(const TrainConfig& c);

struct TrainReport {
    std::vector<double> train_loss;  // one entry per epoch actually run
    std::vector<double> val_loss;
    int best_epoch = -1;
    int epochs_run = 0;
    std::size_t parameter_count = 0;
    double wall_time = 0;
    bool diverged = false;
    std::string stop_reason;
};

nlohmann::ordered_json to_json(const TrainReport& r, bool include_timing = false);
nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& doc);

/// ½‖y − μ‖².
double surrogate_loss(const Eigen::VectorXd& mu, const Eigen::VectorXd& y);

/// log Z = ½·d·log 2π − ½·log|Λ| + ½·ηᵀΛ⁻¹η. Throws NumericalError unless Λ ≻ 0.
double log_partition(const PrecisionSystem& system);

/// −log p(y) = ½yᵀΛy − ηᵀy + log Z.
double nll_loss(const PrecisionSystem& system, const Eigen::VectorXd& y);

/// Same closed forms for a dense Λ of any dimension.
double gaussian_log_partition(const Eigen::MatrixXd& lambda, const Eigen::VectorXd& eta);
double gaussian_nll(const Eigen::MatrixXd& lambda, const Eigen::VectorXd& eta, const Eigen::VectorXd& y);

/// Gradient of a loss with respect to the free entries of a PrecisionSystem.
/// diag[i] is the symmetric gradient of node block Λ_ii (so ∂/∂a = diag(0,0),
/// ∂/∂b = 2·diag(0,1), ∂/∂c = diag(1,1)); off[k] is the gradient of edge block
/// B_k, counting both the (s,t) and the transposed (t,s) placement.
struct SystemGrad {
    Eigen::VectorXd eta;
    std::vector<Eigen::Matrix2d> diag;
    std::vector<Eigen::Matrix2d> off;
};

/// Surrogate loss gradients through μ = Λ⁻¹η, one extra solve with `solver`.
SystemGrad solve_adjoint_gradients(const PrecisionSystem& system, const SystemSolver& solver,
                                   const Eigen::VectorXd& mu, const Eigen::VectorXd& y);
SystemGrad solve_adjoint_gradients(const PrecisionSystem& system, const Eigen::VectorXd& mu,
                                   const Eigen::VectorXd& y);

/// Exact NLL gradients. Uses a dense inverse; meant for small systems.
SystemGrad nll_gradients(const PrecisionSystem& system, const Eigen::VectorXd& y);

struct ModelGrad {
    std::vector<MlpGrad> node;
    std::vector<MlpGrad> edge;

    static ModelGrad zeros_like(const CgrfModel& model);
};

ModelGrad backprop_model(const CgrfModel& model, const AssemblyTape& tape, const GraphFeatures& features,
                         const SystemGrad& grad);

/// Parameter order: node nets then edge nets; per net weights row-major then bias, layer by layer.
Eigen::VectorXd flatten_parameters(const CgrfModel& model);
void unflatten_parameters(CgrfModel& model, const Eigen::VectorXd& params);
Eigen::VectorXd flatten_gradient(const ModelGrad& grad);

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Eigen::VectorXd m, v;
    long long t = 0;

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);
};

/// A sample prepared for the model: standardized features and interleaved label.
struct Example {
    int id = 0;
    GraphFeatures features;
    Eigen::VectorXd y;
    Eigen::VectorXd v_pre;
};

std::vector<Example> prepare_examples(const Standardizer& s, const std::vector<Sample>& samples, int jobs = 1);

/// Loss of one example; when `grad` is set, also its full parameter gradient.
double example_loss(const CgrfModel& model, const Example& ex, LossKind loss, Eigen::VectorXd* grad = nullptr);

struct TrainResult {
    CgrfModel model;
    TrainReport report;
};

using ProgressFn = std::function<void(int epoch, double train_loss, double val_loss, double lr)>;

/// Fits the standardizer on `train` (when enabled), then mini-batch Adam.
/// Returns the weights with the best validation loss. Batch gradients are
/// reduced in sample order, so results do not depend on config.jobs.
TrainResult train(CgrfModel model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                  const TrainConfig& config, const ProgressFn& progress = {});

struct EvalResult {
    double mse = 0;                  // mean over samples of the per-entry squared error
    double baseline_mse_vpre = 0;    // same with v_pre as the prediction
    double ratio = 0;                // mse / baseline_mse_vpre
    std::vector<double> residuals;   // per-sample mse
};

EvalResult eval_model(const CgrfModel& model, const std::vector<Sample>& samples, int jobs = 1);
nlohmann::ordered_json to_json(const EvalResult& r);

} // namespace gridwarm
