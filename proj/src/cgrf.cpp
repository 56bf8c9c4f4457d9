#include "gridwarm/cgrf.hpp"

#include "gridwarm/error.hpp"
#include "gridwarm/powerflow.hpp"

#include <cmath>
#include <map>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

namespace gridwarm {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "tanh")
        return Activation::tanh;
    if (s == "relu")
        return Activation::relu;
    throw Error("unknown activation '" + s + "' (expected tanh or relu)");
}

std::string to_string(Sharing s) { return s == Sharing::shared ? "shared" : "per_element"; }

Sharing sharing_from_string(const std::string& s) {
    if (s == "shared")
        return Sharing::shared;
    if (s == "per_element")
        return Sharing::per_element;
    throw Error("unknown sharing mode '" + s + "' (expected shared or per_element)");
}

// ---------------------------------------------------------------------------
// Mlp

Mlp Mlp::zeros(std::vector<int> sizes, Activation activation) {
    if (sizes.size() < 2)
        throw Error("an Mlp needs at least an input and an output size");
    for (int s : sizes)
        if (s < 1)
            throw Error("Mlp layer sizes must be positive");
    Mlp net;
    net.sizes = std::move(sizes);
    net.activation = activation;
    for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
        net.weights.push_back(Eigen::MatrixXd::Zero(net.sizes[l + 1], net.sizes[l]));
        net.biases.push_back(Eigen::VectorXd::Zero(net.sizes[l + 1]));
    }
    return net;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
    if (input.size() != input_size())
        throw Error("Mlp input has " + std::to_string(input.size()) + " entries, expected " +
                    std::to_string(input_size()));
    return forward_batch(input.transpose()).row(0).transpose();
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& input, Tape* tape) const {
    if (input.cols() != input_size())
        throw Error("Mlp input has " + std::to_string(input.cols()) + " columns, expected " +
                    std::to_string(input_size()));
    if (tape) {
        tape->h.clear();
        tape->h.push_back(input);
    }
    Eigen::MatrixXd h = input;
    const auto layers = weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = h * weights[l].transpose();
        z.rowwise() += biases[l].transpose();
        if (l + 1 < layers) {
            if (activation == Activation::tanh)
                z = z.array().tanh().matrix();
            else
                z = z.cwiseMax(0.0);
        }
        h = std::move(z);
        if (tape)
            tape->h.push_back(h);
    }
    return h;
}

MlpGrad MlpGrad::zeros_like(const Mlp& net) {
    MlpGrad g;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        g.weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
        g.biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
    return g;
}

void MlpGrad::add(const MlpGrad& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += other.weights[l];
        biases[l] += other.biases[l];
    }
}

void mlp_backward(const Mlp& net, const Mlp::Tape& tape, const Eigen::MatrixXd& d_output, MlpGrad& grad) {
    const auto layers = net.weights.size();
    Eigen::MatrixXd dz = d_output;
    for (std::size_t l = layers; l-- > 0;) {
        const auto& h_in = tape.h[l];
        grad.weights[l].noalias() += dz.transpose() * h_in;
        grad.biases[l] += dz.colwise().sum().transpose();
        if (l == 0)
            break;
        Eigen::MatrixXd dh = dz * net.weights[l];
        if (net.activation == Activation::tanh)
            dz = (dh.array() * (1.0 - h_in.array().square())).matrix();
        else
            dz = (dh.array() * (h_in.array() > 0.0).cast<double>()).matrix();
    }
}

void xavier_init(Mlp& net, Rng& rng) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        auto& w = net.weights[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        // Fill row by row so the draw order does not depend on storage order.
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                w(r, c) = uniform(rng, -limit, limit);
        net.biases[l].setZero();
    }
}

// ---------------------------------------------------------------------------
// Model

const Mlp& CgrfModel::node_net(std::size_t bus) const {
    return sharing == Sharing::shared ? node_nets.at(0) : node_nets.at(bus);
}

const Mlp& CgrfModel::edge_net(std::size_t branch) const {
    return sharing == Sharing::shared ? edge_nets.at(0) : edge_nets.at(branch);
}

std::size_t CgrfModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& net : node_nets)
        n += net.parameter_count();
    for (const auto& net : edge_nets)
        n += net.parameter_count();
    return n;
}

void CgrfModel::check_compatible(const GraphFeatures& f) const {
    if (f.node.cols() != kNodeFeatureCount || f.edge.cols() != kEdgeFeatureCount)
        throw Error("feature matrices have the wrong number of columns");
    if (sharing == Sharing::shared)
        return;
    if (f.bus_count() != node_nets.size())
        throw Error("per-element model has " + std::to_string(node_nets.size()) + " node networks but the grid has " +
                    std::to_string(f.bus_count()) + " buses");
    if (f.branch_count != edge_nets.size())
        throw Error("per-element model has " + std::to_string(edge_nets.size()) +
                    " edge networks but the grid has " + std::to_string(f.branch_count) + " branches");
}

namespace {

Mlp make_net(int in, int out, const ModelConfig& c, Rng& rng) {
    if (c.n_layer < 1 || c.hidden < 1)
        throw Error("n_layer and hidden must be at least 1");
    std::vector<int> sizes{in};
    for (int l = 0; l + 1 < c.n_layer; ++l)
        sizes.push_back(c.hidden);
    sizes.push_back(out);
    auto net = Mlp::zeros(sizes, c.activation);
    xavier_init(net, rng);
    net.weights.back() *= c.output_scale;
    return net;
}

} // namespace

CgrfModel init_model(const ModelConfig& c, std::uint64_t seed) {
    CgrfModel m;
    m.sharing = c.sharing;
    m.zi_enforce = c.zi_enforce;
    std::size_t n_node = 1, n_edge = 1;
    if (c.sharing == Sharing::per_element) {
        if (c.bus_count == 0)
            throw Error("a per-element model needs the bus count of its grid");
        n_node = c.bus_count;
        n_edge = c.branch_count;
    }
    Rng rng(derive_seed(seed, 0xc9f));
    for (std::size_t i = 0; i < n_node; ++i) {
        auto net = make_net(kNodeFeatureCount, kNodeOutputs, c, rng);
        net.biases.back() << 1.0, 0.0, 1.0, 0.0, 0.0;
        m.node_nets.push_back(std::move(net));
    }
    for (std::size_t k = 0; k < n_edge; ++k)
        m.edge_nets.push_back(make_net(kEdgeFeatureCount, kEdgeOutputs, c, rng));
    return m;
}

// ---------------------------------------------------------------------------
// Assembly

Eigen::SparseMatrix<double> PrecisionSystem::lambda() const {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(4 * (n + 2 * edges.size()) + 2 * n);
    auto put = [&](std::size_t bi, std::size_t bj, const Eigen::Matrix2d& m) {
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                t.emplace_back(static_cast<int>(2 * bi + a), static_cast<int>(2 * bj + b), m(a, b));
    };
    for (std::size_t i = 0; i < n; ++i)
        put(i, i, diag[i] + ridge * Eigen::Matrix2d::Identity());
    for (std::size_t k = 0; k < edges.size(); ++k) {
        put(edges[k].from, edges[k].to, off[k]);
        put(edges[k].to, edges[k].from, off[k].transpose());
    }
    const auto d = static_cast<int>(dim());
    Eigen::SparseMatrix<double> L(d, d);
    L.setFromTriplets(t.begin(), t.end());
    return L;
}

Eigen::MatrixXd PrecisionSystem::dense_lambda() const { return Eigen::MatrixXd(lambda()); }

PrecisionSystem assemble_system(const CgrfModel& model, const GraphFeatures& f, AssemblyTape* tape) {
    model.check_compatible(f);
    const auto n = f.bus_count();
    const auto m = f.edges.size();
    if (static_cast<std::size_t>(f.edge.rows()) != m || f.zero_injection.size() != n)
        throw Error("graph features are inconsistent: edge rows, edge list and bus count disagree");

    Eigen::MatrixXd node_out(static_cast<Eigen::Index>(n), kNodeOutputs);
    Eigen::MatrixXd edge_out(static_cast<Eigen::Index>(m), kEdgeOutputs);
    if (tape) {
        tape->node.clear();
        tape->edge.clear();
    }
    if (model.sharing == Sharing::shared) {
        Mlp::Tape* nt = nullptr;
        Mlp::Tape* et = nullptr;
        if (tape) {
            tape->node.resize(1);
            tape->edge.resize(1);
            nt = &tape->node[0];
            et = &tape->edge[0];
        }
        node_out = model.node_nets.at(0).forward_batch(f.node, nt);
        if (m > 0)
            edge_out = model.edge_nets.at(0).forward_batch(f.edge, et);
        else if (et)
            et->h.clear();
    } else {
        if (tape) {
            tape->node.resize(n);
            tape->edge.resize(m);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            node_out.row(r) = model.node_nets[i].forward_batch(f.node.row(r), tape ? &tape->node[i] : nullptr);
        }
        for (std::size_t k = 0; k < m; ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            edge_out.row(r) =
                model.edge_nets[f.edges[k].branch].forward_batch(f.edge.row(r), tape ? &tape->edge[k] : nullptr);
        }
    }

    PrecisionSystem s;
    s.n = n;
    s.edges = f.edges;
    s.diag.resize(n);
    s.off.resize(m);
    s.eta.resize(static_cast<Eigen::Index>(2 * n));
    std::vector<bool> zeroed(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const double a = node_out(r, 0), b = node_out(r, 1), c = node_out(r, 2);
        s.diag[i] << a, b, b, c;
        zeroed[i] = model.zi_enforce && f.zero_injection[i];
        s.eta[2 * r] = zeroed[i] ? 0.0 : node_out(r, 3);
        s.eta[2 * r + 1] = zeroed[i] ? 0.0 : node_out(r, 4);
    }
    for (std::size_t k = 0; k < m; ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        s.off[k] << edge_out(r, 0), edge_out(r, 1), edge_out(r, 2), edge_out(r, 3);
    }
    if (tape)
        tape->eta_zeroed = std::move(zeroed);
    return s;
}

// ---------------------------------------------------------------------------
// Inference

struct SystemSolver::Impl {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    bool use_lu = false;
};

namespace {

constexpr int kMaxRidgeRetries = 4;

bool residual_ok(const Eigen::SparseMatrix<double>& L, const Eigen::VectorXd& x, const Eigen::VectorXd& rhs) {
    if (!x.allFinite())
        return false;
    const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
    return (L * x - rhs).cwiseAbs().maxCoeff() <= 1e-10 * scale;
}

} // namespace

SystemSolver::SystemSolver(const PrecisionSystem& system) : impl_(std::make_unique<Impl>()) {
    if (system.dim() == 0)
        throw NumericalError("cannot solve an empty system");
    auto sys = system;
    // A fixed probe catches factorizations that succeed formally but are unusable.
    const Eigen::VectorXd probe = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(sys.dim()), 1.0, 2.0);
    for (int retry = 0; retry <= kMaxRidgeRetries; ++retry) {
        lambda_ = sys.lambda();
        lambda_.makeCompressed();
        impl_->ldlt.compute(lambda_);
        if (impl_->ldlt.info() == Eigen::Success && residual_ok(lambda_, impl_->ldlt.solve(probe), probe)) {
            impl_->use_lu = false;
            method_ = "ldlt";
            ridge_ = sys.ridge;
            retries_ = retry;
            return;
        }
        impl_->lu.compute(lambda_);
        if (impl_->lu.info() == Eigen::Success) {
            const Eigen::VectorXd x = impl_->lu.solve(probe);
            if (residual_ok(lambda_, x, probe)) {
                impl_->use_lu = true;
                method_ = "lu";
                ridge_ = sys.ridge;
                retries_ = retry;
                return;
            }
        }
        sys.ridge = sys.ridge > 0 ? sys.ridge * 10.0 : kDefaultRidge;
    }
    throw NumericalError("precision matrix is singular after " + std::to_string(kMaxRidgeRetries) +
                         " ridge increases");
}

SystemSolver::~SystemSolver() = default;
SystemSolver::SystemSolver(SystemSolver&&) noexcept = default;
SystemSolver& SystemSolver::operator=(SystemSolver&&) noexcept = default;

Eigen::VectorXd SystemSolver::solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd x = impl_->use_lu ? Eigen::VectorXd(impl_->lu.solve(rhs)) : Eigen::VectorXd(impl_->ldlt.solve(rhs));
    if (!x.allFinite())
        throw NumericalError("precision solve produced non-finite values");
    return x;
}

InferResult infer(const PrecisionSystem& system) {
    SystemSolver solver(system);
    InferResult r;
    r.mu = solver.solve(system.eta);
    r.state = VoltageState::from_interleaved(std::vector<double>(r.mu.data(), r.mu.data() + r.mu.size()));
    r.diagnostics.method = solver.method();
    r.diagnostics.retries = solver.retries();
    r.diagnostics.ridge = solver.ridge();
    r.diagnostics.residual = (solver.lambda() * r.mu - system.eta).cwiseAbs().maxCoeff();
    return r;
}

VoltageState predict(const CgrfModel& model, const GraphFeatures& raw) {
    const auto f = apply_standardizer(model.standardizer, raw);
    return infer(assemble_system(model, f)).state;
}

VoltageState predict(const CgrfModel& model, const Sample& sample) { return predict(model, extract_features(sample)); }

// ---------------------------------------------------------------------------
// Similarity with the physical linear system

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

} // namespace

SimilarityReport compare_to_linearization(const PrecisionSystem& system, const GridCase& grid,
                                          const VoltageState& solution) {
    if (grid.buses.size() != system.n || solution.size() != system.n)
        throw Error("similarity report: system, case and solution disagree in bus count");
    const auto y = build_ybus(grid);
    const auto L = system.dense_lambda();

    // Block patterns on bus pairs.
    std::map<std::pair<Eigen::Index, Eigen::Index>, bool> ypat, lpat;
    for (int k = 0; k < y.outerSize(); ++k)
        for (YBus::InnerIterator it(y, k); it; ++it)
            if (it.value() != std::complex<double>(0.0, 0.0) || it.row() == it.col())
                ypat[{it.row(), it.col()}] = true;
    for (std::size_t i = 0; i < system.n; ++i)
        lpat[{static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)}] = true;
    for (const auto& e : system.edges) {
        lpat[{static_cast<Eigen::Index>(e.from), static_cast<Eigen::Index>(e.to)}] = true;
        lpat[{static_cast<Eigen::Index>(e.to), static_cast<Eigen::Index>(e.from)}] = true;
    }
    auto both = lpat;
    both.insert(ypat.begin(), ypat.end());
    std::size_t common = 0;
    for (const auto& [key, _] : both)
        common += ypat.count(key) && lpat.count(key);

    SimilarityReport r;
    r.pattern_overlap = both.empty() ? 1.0 : static_cast<double>(common) / static_cast<double>(both.size());

    std::vector<double> lv, yv;
    for (const auto& [key, _] : both) {
        const auto [i, j] = key;
        const auto yij = y.coeff(i, j);
        const double ex[2][2] = {{yij.real(), -yij.imag()}, {yij.imag(), yij.real()}};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                lv.push_back(std::abs(L(2 * i + a, 2 * j + b)));
                yv.push_back(std::abs(ex[a][b]));
            }
    }
    r.lambda_cosine = cosine(lv, yv);

    std::vector<std::complex<double>> v(system.n);
    for (std::size_t i = 0; i < system.n; ++i)
        v[i] = solution.at(i);
    Eigen::Map<const Eigen::VectorXcd> vm(v.data(), static_cast<Eigen::Index>(v.size()));
    const Eigen::VectorXcd current = y * vm;
    std::vector<double> ev(system.eta.data(), system.eta.data() + system.eta.size()), jv;
    for (Eigen::Index i = 0; i < current.size(); ++i) {
        jv.push_back(current[i].real());
        jv.push_back(current[i].imag());
    }
    r.eta_cosine = cosine(ev, jv);
    return r;
}

ordered_json to_json(const SimilarityReport& r) {
    return {{"pattern_overlap", r.pattern_overlap}, {"lambda_cosine", r.lambda_cosine}, {"eta_cosine", r.eta_cosine}};
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kModelFormat = "gridwarm-cgrf";

ordered_json net_json(const Mlp& net) {
    ordered_json w = ordered_json::array(), b = ordered_json::array();
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        std::vector<double> flat;
        const auto& m = net.weights[l];
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                flat.push_back(m(r, c));
        w.push_back(flat);
        b.push_back(std::vector<double>(net.biases[l].data(), net.biases[l].data() + net.biases[l].size()));
    }
    return {{"sizes", net.sizes}, {"weights", w}, {"biases", b}};
}

Mlp net_from_json(const json& doc, Activation act, const std::string& path) {
    auto net = Mlp::zeros(doc.at("sizes").get<std::vector<int>>(), act);
    const auto& w = doc.at("weights");
    const auto& b = doc.at("biases");
    if (w.size() != net.weights.size() || b.size() != net.biases.size())
        throw SchemaError(path + ": layer count does not match sizes");
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        const auto flat = w[l].get<std::vector<double>>();
        const auto bias = b[l].get<std::vector<double>>();
        auto& m = net.weights[l];
        if (flat.size() != static_cast<std::size_t>(m.size()) || bias.size() != static_cast<std::size_t>(net.biases[l].size()))
            throw SchemaError(path + ".weights[" + std::to_string(l) + "]: wrong number of values");
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = flat[k++];
        for (std::size_t i = 0; i < bias.size(); ++i)
            net.biases[l][static_cast<Eigen::Index>(i)] = bias[i];
    }
    return net;
}

} // namespace

ordered_json model_to_json(const CgrfModel& m) {
    ordered_json nodes = ordered_json::array(), edges = ordered_json::array();
    for (const auto& net : m.node_nets)
        nodes.push_back(net_json(net));
    for (const auto& net : m.edge_nets)
        edges.push_back(net_json(net));
    const auto act = m.node_nets.empty() ? Activation::tanh : m.node_nets.front().activation;
    return {{"format", kModelFormat},
            {"version", kModelFormatVersion},
            {"code_version", GRIDWARM_VERSION},
            {"sharing", to_string(m.sharing)},
            {"zi_enforce", m.zi_enforce},
            {"activation", to_string(act)},
            {"parameter_count", m.parameter_count()},
            {"standardizer", to_json(m.standardizer)},
            {"node_nets", nodes},
            {"edge_nets", edges}};
}

CgrfModel model_from_json(const json& doc) {
    if (!doc.is_object() || doc.value("format", "") != kModelFormat)
        throw SchemaError("$.format: not a gridwarm cgrf model");
    if (!doc.contains("version") || doc.at("version") != kModelFormatVersion)
        throw SchemaError("$.version: unsupported model version " + doc.value("version", json()).dump() +
                          " (expected " + std::to_string(kModelFormatVersion) + ")");
    CgrfModel m;
    try {
        m.sharing = sharing_from_string(doc.at("sharing").get<std::string>());
        m.zi_enforce = doc.at("zi_enforce").get<bool>();
        const auto act = activation_from_string(doc.at("activation").get<std::string>());
        m.standardizer = standardizer_from_json(doc.at("standardizer"), "$.standardizer");
        std::size_t i = 0;
        for (const auto& n : doc.at("node_nets"))
            m.node_nets.push_back(net_from_json(n, act, "$.node_nets[" + std::to_string(i++) + "]"));
        i = 0;
        for (const auto& e : doc.at("edge_nets"))
            m.edge_nets.push_back(net_from_json(e, act, "$.edge_nets[" + std::to_string(i++) + "]"));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("$: malformed model: ") + e.what());
    }
    if (m.node_nets.empty() || (m.sharing == Sharing::shared && (m.node_nets.size() != 1 || m.edge_nets.size() != 1)))
        throw SchemaError("$: shared model must hold exactly one node and one edge network");
    for (const auto& net : m.node_nets)
        if (net.input_size() != kNodeFeatureCount || net.output_size() != kNodeOutputs)
            throw SchemaError("$.node_nets: expected 10 inputs and 5 outputs");
    for (const auto& net : m.edge_nets)
        if (net.input_size() != kEdgeFeatureCount || net.output_size() != kEdgeOutputs)
            throw SchemaError("$.edge_nets: expected 3 inputs and 4 outputs");
    if (doc.contains("parameter_count") && doc.at("parameter_count") != m.parameter_count())
        throw SchemaError("$.parameter_count: does not match the stored networks");
    return m;
}

std::string save_model(const CgrfModel& model) { return model_to_json(model).dump() + "\n"; }

CgrfModel load_model(const std::string& bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("model file is truncated or not JSON: ") + e.what());
    }
    return model_from_json(doc);
}

} // namespace gridwarm
