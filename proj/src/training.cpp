#include "gridwarm/training.hpp"

#include "gridwarm/error.hpp"
#include "gridwarm/parallel.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/SparseCholesky>

namespace gridwarm {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(LossKind k) { return k == LossKind::surrogate ? "surrogate" : "exact_nll"; }

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "surrogate")
        return LossKind::surrogate;
    if (s == "exact_nll")
        return LossKind::exact_nll;
    throw Error("unknown loss '" + s + "' (expected surrogate or exact_nll)");
}

void check_config(const TrainConfig& c) {
    if (c.epochs < 1)
        throw Error("epochs must be at least 1");
    if (!(c.lr > 0))
        throw Error("learning rate must be positive");
    if (c.batch_size < 1)
        throw Error("batch size must be at least 1");
    if (c.lr_period < 1 || !(c.lr_factor > 0))
        throw Error("lr schedule needs period >= 1 and factor > 0");
    if (c.patience < 0 || c.grad_clip < 0)
        throw Error("patience and grad_clip must be non-negative");
    if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1 && c.eps > 0))
        throw Error("Adam needs 0 <= beta < 1 and eps > 0");
}

// ---------------------------------------------------------------------------
// Losses

double surrogate_loss(const Eigen::VectorXd& mu, const Eigen::VectorXd& y) {
    if (mu.size() != y.size())
        throw Error("surrogate loss: prediction and label lengths differ");
    return 0.5 * (y - mu).squaredNorm();
}

namespace {

struct Cholesky {
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt;
    double log_det = 0;
};

void factor_pd(const PrecisionSystem& system, Cholesky& c) {
    const auto L = system.lambda();
    c.llt.compute(L);
    if (c.llt.info() != Eigen::Success)
        throw NumericalError("precision matrix is not positive definite");
    // SimplicialLLT permutes; the diagonal of its factor still gives the determinant.
    const Eigen::SparseMatrix<double> f = c.llt.matrixL();
    c.log_det = 0;
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        const double d = f.coeff(i, i);
        if (!(d > 0))
            throw NumericalError("precision matrix is not positive definite");
        c.log_det += 2.0 * std::log(d);
    }
}

} // namespace

double log_partition(const PrecisionSystem& system) {
    Cholesky c;
    factor_pd(system, c);
    const Eigen::VectorXd mu = c.llt.solve(system.eta);
    const double d = static_cast<double>(system.dim());
    return 0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * c.log_det + 0.5 * system.eta.dot(mu);
}

double nll_loss(const PrecisionSystem& system, const Eigen::VectorXd& y) {
    if (y.size() != static_cast<Eigen::Index>(system.dim()))
        throw Error("nll: label length does not match the system");
    const auto L = system.lambda();
    return 0.5 * y.dot(L * y) - system.eta.dot(y) + log_partition(system);
}

double gaussian_log_partition(const Eigen::MatrixXd& lambda, const Eigen::VectorXd& eta) {
    if (lambda.rows() != lambda.cols() || lambda.rows() != eta.size() || eta.size() == 0)
        throw Error("log partition: dimensions do not match");
    const Eigen::LLT<Eigen::MatrixXd> llt(lambda);
    if (llt.info() != Eigen::Success)
        throw NumericalError("precision matrix is not positive definite");
    const Eigen::MatrixXd Lf = llt.matrixL();
    const double log_det = 2.0 * Lf.diagonal().array().log().sum();
    const double d = static_cast<double>(eta.size());
    return 0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det + 0.5 * eta.dot(llt.solve(eta));
}

double gaussian_nll(const Eigen::MatrixXd& lambda, const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
    if (y.size() != eta.size())
        throw Error("nll: label length does not match the system");
    return 0.5 * y.dot(lambda * y) - eta.dot(y) + gaussian_log_partition(lambda, eta);
}

// ---------------------------------------------------------------------------
// System gradients

namespace {

Eigen::Vector2d block(const Eigen::VectorXd& v, std::size_t i) { return v.segment<2>(static_cast<Eigen::Index>(2 * i)); }

// Fills diag/off from a symmetric matrix gradient G given blockwise by `g(i, j)`.
template <class BlockFn>
void fill_blocks(const PrecisionSystem& s, SystemGrad& out, BlockFn g) {
    out.diag.resize(s.n);
    out.off.resize(s.edges.size());
    for (std::size_t i = 0; i < s.n; ++i)
        out.diag[i] = g(i, i);
    for (std::size_t k = 0; k < s.edges.size(); ++k)
        out.off[k] = 2.0 * g(s.edges[k].from, s.edges[k].to);
}

} // namespace

SystemGrad solve_adjoint_gradients(const PrecisionSystem& system, const SystemSolver& solver, const Eigen::VectorXd& mu,
                                   const Eigen::VectorXd& y) {
    if (mu.size() != y.size() || y.size() != static_cast<Eigen::Index>(system.dim()))
        throw Error("adjoint: vector lengths do not match the system");
    SystemGrad out;
    const Eigen::VectorXd lam = solver.solve(mu - y);
    out.eta = lam;
    fill_blocks(system, out, [&](std::size_t i, std::size_t j) -> Eigen::Matrix2d {
        const auto li = block(lam, i), lj = block(lam, j), mi = block(mu, i), mj = block(mu, j);
        return -0.5 * (li * mj.transpose() + mi * lj.transpose());
    });
    return out;
}

SystemGrad solve_adjoint_gradients(const PrecisionSystem& system, const Eigen::VectorXd& mu, const Eigen::VectorXd& y) {
    return solve_adjoint_gradients(system, SystemSolver(system), mu, y);
}

SystemGrad nll_gradients(const PrecisionSystem& system, const Eigen::VectorXd& y) {
    if (y.size() != static_cast<Eigen::Index>(system.dim()))
        throw Error("nll: label length does not match the system");
    Cholesky c;
    factor_pd(system, c);
    const Eigen::VectorXd mu = c.llt.solve(system.eta);
    const Eigen::MatrixXd inv =
        c.llt.solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(system.dim()), static_cast<Eigen::Index>(system.dim())));
    SystemGrad out;
    out.eta = mu - y;
    fill_blocks(system, out, [&](std::size_t i, std::size_t j) -> Eigen::Matrix2d {
        const auto yi = block(y, i), yj = block(y, j), mi = block(mu, i), mj = block(mu, j);
        const Eigen::Matrix2d inv_ij = inv.block<2, 2>(static_cast<Eigen::Index>(2 * i), static_cast<Eigen::Index>(2 * j));
        return 0.5 * (yi * yj.transpose()) - 0.5 * inv_ij - 0.5 * (mi * mj.transpose());
    });
    return out;
}

// ---------------------------------------------------------------------------
// Model gradients

ModelGrad ModelGrad::zeros_like(const CgrfModel& model) {
    ModelGrad g;
    for (const auto& net : model.node_nets)
        g.node.push_back(MlpGrad::zeros_like(net));
    for (const auto& net : model.edge_nets)
        g.edge.push_back(MlpGrad::zeros_like(net));
    return g;
}

ModelGrad backprop_model(const CgrfModel& model, const AssemblyTape& tape, const GraphFeatures& f,
                         const SystemGrad& g) {
    const auto n = f.bus_count();
    const auto m = f.edges.size();
    Eigen::MatrixXd d_node(static_cast<Eigen::Index>(n), kNodeOutputs);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto& G = g.diag[i];
        const bool zeroed = tape.eta_zeroed.at(i);
        d_node(r, 0) = G(0, 0);
        d_node(r, 1) = G(0, 1) + G(1, 0);
        d_node(r, 2) = G(1, 1);
        d_node(r, 3) = zeroed ? 0.0 : g.eta[2 * r];
        d_node(r, 4) = zeroed ? 0.0 : g.eta[2 * r + 1];
    }
    Eigen::MatrixXd d_edge(static_cast<Eigen::Index>(m), kEdgeOutputs);
    for (std::size_t k = 0; k < m; ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        d_edge.row(r) << g.off[k](0, 0), g.off[k](0, 1), g.off[k](1, 0), g.off[k](1, 1);
    }

    auto out = ModelGrad::zeros_like(model);
    if (model.sharing == Sharing::shared) {
        mlp_backward(model.node_nets[0], tape.node.at(0), d_node, out.node[0]);
        if (m > 0)
            mlp_backward(model.edge_nets[0], tape.edge.at(0), d_edge, out.edge[0]);
    } else {
        for (std::size_t i = 0; i < n; ++i)
            mlp_backward(model.node_nets[i], tape.node.at(i), d_node.row(static_cast<Eigen::Index>(i)), out.node[i]);
        for (std::size_t k = 0; k < m; ++k) {
            const auto b = f.edges[k].branch;
            mlp_backward(model.edge_nets[b], tape.edge.at(k), d_edge.row(static_cast<Eigen::Index>(k)), out.edge[b]);
        }
    }
    return out;
}

namespace {

template <class Net, class Visit>
void visit_net(Net& net, Visit&& visit) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        auto& w = net.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                visit(w(r, c));
        for (Eigen::Index i = 0; i < net.biases[l].size(); ++i)
            visit(net.biases[l][i]);
    }
}

template <class M, class Visit>
void visit_all(M& model_or_grad, Visit&& visit) {
    if constexpr (requires { model_or_grad.node_nets; }) {
        for (auto& net : model_or_grad.node_nets)
            visit_net(net, visit);
        for (auto& net : model_or_grad.edge_nets)
            visit_net(net, visit);
    } else {
        for (auto& net : model_or_grad.node)
            visit_net(net, visit);
        for (auto& net : model_or_grad.edge)
            visit_net(net, visit);
    }
}

} // namespace

Eigen::VectorXd flatten_parameters(const CgrfModel& model) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(model.parameter_count()));
    Eigen::Index k = 0;
    visit_all(model, [&](const double& x) { out[k++] = x; });
    return out;
}

void unflatten_parameters(CgrfModel& model, const Eigen::VectorXd& p) {
    if (p.size() != static_cast<Eigen::Index>(model.parameter_count()))
        throw Error("parameter vector length does not match the model");
    Eigen::Index k = 0;
    visit_all(model, [&](double& x) { x = p[k++]; });
}

Eigen::VectorXd flatten_gradient(const ModelGrad& g) {
    Eigen::Index n = 0;
    visit_all(g, [&](const double&) { ++n; });
    Eigen::VectorXd out(n);
    Eigen::Index k = 0;
    visit_all(g, [&](const double& x) { out[k++] = x; });
    return out;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    if (m.size() != params.size()) {
        m = Eigen::VectorXd::Zero(params.size());
        v = Eigen::VectorXd::Zero(params.size());
        t = 0;
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    if (lr == 0.0)
        return;
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

Eigen::VectorXd interleave(const VoltageState& v) {
    const auto x = v.interleaved();
    return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

} // namespace

std::vector<Example> prepare_examples(const Standardizer& s, const std::vector<Sample>& samples, int jobs) {
    std::vector<Example> out(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t i) {
        const auto& smp = samples[i];
        out[i].id = smp.id;
        out[i].features = apply_standardizer(s, extract_features(smp));
        out[i].y = interleave(smp.label);
        out[i].v_pre = interleave(smp.pre_solution);
    });
    return out;
}

double example_loss(const CgrfModel& model, const Example& ex, LossKind loss, Eigen::VectorXd* grad) {
    AssemblyTape tape;
    const auto system = assemble_system(model, ex.features, grad ? &tape : nullptr);
    if (loss == LossKind::surrogate) {
        SystemSolver solver(system);
        const Eigen::VectorXd mu = solver.solve(system.eta);
        const double value = surrogate_loss(mu, ex.y);
        if (grad)
            *grad = flatten_gradient(backprop_model(model, tape, ex.features, solve_adjoint_gradients(system, solver, mu, ex.y)));
        return value;
    }
    const double value = nll_loss(system, ex.y);
    if (grad)
        *grad = flatten_gradient(backprop_model(model, tape, ex.features, nll_gradients(system, ex.y)));
    return value;
}

namespace {

double mean_loss(const CgrfModel& model, const std::vector<Example>& data, LossKind loss, int jobs) {
    std::vector<double> values(data.size());
    parallel_for(data.size(), jobs, [&](std::size_t i) { values[i] = example_loss(model, data[i], loss); });
    double total = 0;
    for (double v : values)
        total += v;
    return data.empty() ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(data.size());
}

} // namespace

TrainResult train(CgrfModel model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config, const ProgressFn& progress) {
    check_config(config);
    if (train_set.empty())
        throw Error("training set is empty");
    const auto t0 = std::chrono::steady_clock::now();

    if (config.standardize) {
        std::vector<GraphFeatures> raw(train_set.size());
        parallel_for(train_set.size(), config.jobs, [&](std::size_t i) { raw[i] = extract_features(train_set[i]); });
        model.standardizer = fit_standardizer(raw);
    } else {
        model.standardizer = Standardizer{};
        model.standardizer.enabled = false;
    }
    const auto train_data = prepare_examples(model.standardizer, train_set, config.jobs);
    const auto val_data = prepare_examples(model.standardizer, val_set, config.jobs);
    for (const auto& ex : train_data)
        model.check_compatible(ex.features);

    TrainResult result;
    auto& rep = result.report;
    rep.parameter_count = model.parameter_count();

    Eigen::VectorXd params = flatten_parameters(model);
    Eigen::VectorXd best = params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    Adam adam{config.beta1, config.beta2, config.eps, {}, {}, 0};
    Rng rng(derive_seed(config.seed, 0x7a1));
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);

    const auto workers = static_cast<std::size_t>(std::max(1, config.jobs));
    std::vector<Eigen::VectorXd> grads(workers);
    std::vector<double> losses(workers);

    try {
        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            const double lr = config.lr * std::pow(config.lr_factor, epoch / config.lr_period);
            shuffle(order.begin(), order.end(), rng);
            double epoch_loss = 0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
                const auto stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
                Eigen::VectorXd batch_grad = Eigen::VectorXd::Zero(params.size());
                // Groups of `workers` samples run in parallel, then add up in sample order.
                for (std::size_t g = start; g < stop; g += workers) {
                    const auto count = std::min(workers, stop - g);
                    parallel_for(count, config.jobs, [&](std::size_t w) {
                        losses[w] = example_loss(model, train_data[order[g + w]], config.loss, &grads[w]);
                    });
                    for (std::size_t w = 0; w < count; ++w) {
                        if (!std::isfinite(losses[w]) || !grads[w].allFinite())
                            throw NumericalError("non-finite loss or gradient on sample " +
                                                 std::to_string(train_data[order[g + w]].id));
                        batch_grad += grads[w];
                        epoch_loss += losses[w];
                    }
                }
                batch_grad /= static_cast<double>(stop - start);
                if (config.grad_clip > 0) {
                    const double norm = batch_grad.norm();
                    if (norm > config.grad_clip)
                        batch_grad *= config.grad_clip / norm;
                }
                adam.step(params, batch_grad, lr);
                unflatten_parameters(model, params);
            }
            epoch_loss /= static_cast<double>(order.size());
            const double val = val_data.empty() ? epoch_loss : mean_loss(model, val_data, config.loss, config.jobs);
            rep.train_loss.push_back(epoch_loss);
            rep.val_loss.push_back(val);
            rep.epochs_run = epoch + 1;
            if (progress)
                progress(epoch, epoch_loss, val, lr);
            if (!std::isfinite(val))
                throw NumericalError("validation loss is not finite at epoch " + std::to_string(epoch));
            if (val < best_val) {
                best_val = val;
                best = params;
                rep.best_epoch = epoch;
                since_best = 0;
            } else if (config.patience > 0 && ++since_best >= config.patience) {
                rep.stop_reason = "early stopping after " + std::to_string(config.patience) +
                                  " epochs without validation improvement";
                break;
            }
        }
        if (rep.stop_reason.empty())
            rep.stop_reason = "epoch limit reached";
    } catch (const NumericalError& e) {
        rep.diverged = true;
        rep.stop_reason = std::string("diverged: ") + e.what();
    }
    unflatten_parameters(model, best);
    result.model = std::move(model);
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

EvalResult eval_model(const CgrfModel& model, const std::vector<Sample>& samples, int jobs) {
    if (samples.empty())
        throw Error("evaluation set is empty");
    const auto data = prepare_examples(model.standardizer, samples, jobs);
    std::vector<double> base(data.size());
    EvalResult r;
    r.residuals.resize(data.size());
    parallel_for(data.size(), jobs, [&](std::size_t i) {
        const auto mu = infer(assemble_system(model, data[i].features)).mu;
        const double d = static_cast<double>(data[i].y.size());
        r.residuals[i] = (mu - data[i].y).squaredNorm() / d;
        base[i] = (data[i].v_pre - data[i].y).squaredNorm() / d;
    });
    for (std::size_t i = 0; i < data.size(); ++i) {
        r.mse += r.residuals[i];
        r.baseline_mse_vpre += base[i];
    }
    r.mse /= static_cast<double>(data.size());
    r.baseline_mse_vpre /= static_cast<double>(data.size());
    r.ratio = r.baseline_mse_vpre > 0 ? r.mse / r.baseline_mse_vpre : std::numeric_limits<double>::infinity();
    return r;
}

// ---------------------------------------------------------------------------
// JSON

ordered_json to_json(const TrainReport& r, bool include_timing) {
    ordered_json out = {{"train_loss", r.train_loss},
                        {"val_loss", r.val_loss},
                        {"best_epoch", r.best_epoch},
                        {"epochs_run", r.epochs_run},
                        {"parameter_count", r.parameter_count},
                        {"diverged", r.diverged},
                        {"stop_reason", r.stop_reason}};
    if (include_timing)
        out["wall_time"] = r.wall_time;
    return out;
}

ordered_json to_json(const TrainConfig& c) {
    return {{"loss", to_string(c.loss)},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"optimizer", {{"name", "adam"}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}}},
            {"lr_schedule", {{"name", "step"}, {"period", c.lr_period}, {"factor", c.lr_factor}}},
            {"patience", c.patience},
            {"grad_clip", c.grad_clip},
            {"standardize", c.standardize},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& doc) {
    TrainConfig c;
    try {
        c.loss = loss_kind_from_string(doc.at("loss").get<std::string>());
        c.epochs = doc.at("epochs").get<int>();
        c.batch_size = doc.at("batch_size").get<int>();
        const auto& o = doc.at("optimizer");
        c.lr = o.at("lr").get<double>();
        c.beta1 = o.at("beta1").get<double>();
        c.beta2 = o.at("beta2").get<double>();
        c.eps = o.at("eps").get<double>();
        c.lr_period = doc.at("lr_schedule").at("period").get<int>();
        c.lr_factor = doc.at("lr_schedule").at("factor").get<double>();
        c.patience = doc.at("patience").get<int>();
        c.grad_clip = doc.at("grad_clip").get<double>();
        c.standardize = doc.at("standardize").get<bool>();
        c.seed = doc.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("$: malformed training config: ") + e.what());
    }
    return c;
}

ordered_json to_json(const EvalResult& r) {
    return {{"mse", r.mse}, {"baseline_mse_vpre", r.baseline_mse_vpre}, {"ratio", r.ratio}, {"residuals", r.residuals}};
}

} // namespace gridwarm
