#pragma once

#include "gridwarm/features.hpp"
#include "gridwarm/rng.hpp"

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

namespace gridwarm {

enum class Activation { tanh, relu };
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully connected network. Hidden layers use `activation`, the output layer is affine.
/// weights[l] is (sizes[l+1] x sizes[l]).
struct Mlp {
    std::vector<int> sizes;
    Activation activation = Activation::tanh;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    /// Post-activation values per layer for a batch; h[0] is the input.
    struct Tape {
        std::vector<Eigen::MatrixXd> h;
    };

    /// Zero-initialized network. Needs at least an input and an output size.
    static Mlp zeros(std::vector<int> sizes, Activation activation = Activation::tanh);

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }
    std::size_t parameter_count() const;

    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
    /// Rows of `input` are independent examples.
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& input, Tape* tape = nullptr) const;

    bool operator==(const Mlp&) const = default;
};

/// Gradient with the same shapes as an Mlp's parameters.
struct MlpGrad {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    static MlpGrad zeros_like(const Mlp& net);
    void add(const MlpGrad& other);
};

/// Accumulates into `grad` the gradient for upstream `d_output` (batch x output).
void mlp_backward(const Mlp& net, const Mlp::Tape& tape, const Eigen::MatrixXd& d_output, MlpGrad& grad);

/// Xavier-uniform weights, zero biases.
void xavier_init(Mlp& net, Rng& rng);

enum class Sharing { shared, per_element };
std::string to_string(Sharing s);
Sharing sharing_from_string(const std::string& s);

inline constexpr int kNodeOutputs = 5;  // a, b, c, eta1, eta2
inline constexpr int kEdgeOutputs = 4;  // 2x2 block, row-major
inline constexpr int kModelFormatVersion = 1;
inline constexpr double kDefaultRidge = 1e-6;

struct ModelConfig {
    Sharing sharing = Sharing::shared;
    bool zi_enforce = false;
    int n_layer = 3;  // linear layers per network
    int hidden = 64;
    Activation activation = Activation::tanh;
    double output_scale = 0.1;  // final-layer weights are scaled by this after Xavier init
    // Per-element mode only: one node net per bus, one edge net per branch index.
    std::size_t bus_count = 0;
    std::size_t branch_count = 0;
};

struct CgrfModel {
    Sharing sharing = Sharing::shared;
    bool zi_enforce = false;
    std::vector<Mlp> node_nets;
    std::vector<Mlp> edge_nets;
    Standardizer standardizer;

    const Mlp& node_net(std::size_t bus) const;
    const Mlp& edge_net(std::size_t branch) const;
    std::size_t parameter_count() const;
    /// Throws Error when a per-element model does not fit the graph.
    void check_compatible(const GraphFeatures& f) const;

    bool operator==(const CgrfModel&) const = default;
};

/// Seeded initialization. Output biases make every Λ_i the identity and η zero.
CgrfModel init_model(const ModelConfig& config, std::uint64_t seed);

/// Λ and η for one sample. Node block i is diag[i]; edge k adds block off[k]
/// at (edges[k].from, edges[k].to) and its transpose at (to, from).
struct PrecisionSystem {
    std::size_t n = 0;  // buses; Λ is 2n x 2n
    std::vector<Eigen::Matrix2d> diag;
    std::vector<EdgeRef> edges;
    std::vector<Eigen::Matrix2d> off;
    Eigen::VectorXd eta;
    double ridge = kDefaultRidge;

    std::size_t dim() const { return 2 * n; }
    /// Assembled Λ including ridge·I.
    Eigen::SparseMatrix<double> lambda() const;
    Eigen::MatrixXd dense_lambda() const;
};

/// Forward state kept for back-propagation.
struct AssemblyTape {
    std::vector<Mlp::Tape> node;  // shared: one batched tape; per-element: one per bus
    std::vector<Mlp::Tape> edge;
    std::vector<bool> eta_zeroed;
};

/// Features must already be standardized with model.standardizer.
PrecisionSystem assemble_system(const CgrfModel& model, const GraphFeatures& features, AssemblyTape* tape = nullptr);

/// Factorization of Λ reused for the adjoint solve.
class SystemSolver {
public:
    /// Throws NumericalError if Λ stays singular after the ridge retries.
    explicit SystemSolver(const PrecisionSystem& system);
    ~SystemSolver();
    SystemSolver(SystemSolver&&) noexcept;
    SystemSolver& operator=(SystemSolver&&) noexcept;

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    /// Ridge actually used, δ·10^retries.
    double ridge() const { return ridge_; }
    int retries() const { return retries_; }
    const std::string& method() const { return method_; }
    const Eigen::SparseMatrix<double>& lambda() const { return lambda_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    Eigen::SparseMatrix<double> lambda_;
    double ridge_ = 0;
    int retries_ = 0;
    std::string method_;
};

struct InferDiagnostics {
    std::string method;  // "ldlt" or "lu"
    int retries = 0;
    double ridge = 0;
    double residual = 0;  // ||Λμ - η||_inf with the ridge actually used
};

struct InferResult {
    Eigen::VectorXd mu;  // interleaved [re_0, im_0, re_1, ...]
    VoltageState state;
    InferDiagnostics diagnostics;
};

InferResult infer(const PrecisionSystem& system);

/// Raw sample features are standardized with the model's statistics.
VoltageState predict(const CgrfModel& model, const GraphFeatures& raw_features);
VoltageState predict(const CgrfModel& model, const Sample& sample);

struct SimilarityReport {
    double pattern_overlap = 0;   // Jaccard index of Λ and Y-bus block patterns
    double lambda_cosine = 0;     // |Λ| vs |real 2x2 expansion of Y-bus| on the union pattern
    double eta_cosine = 0;        // η vs rectangular injection current Y v
};

SimilarityReport compare_to_linearization(const PrecisionSystem& system, const GridCase& grid,
                                          const VoltageState& solution);
nlohmann::ordered_json to_json(const SimilarityReport& r);

std::string save_model(const CgrfModel& model);
CgrfModel load_model(const std::string& bytes);
nlohmann::ordered_json model_to_json(const CgrfModel& model);
CgrfModel model_from_json(const nlohmann::json& doc);

} // namespace gridwarm
