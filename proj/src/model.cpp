#include "portmfg/model.hpp"
#include "portmfg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pmfg {

double Kernel::operator()(int i, int j, double T) const {
    switch (kind) {
    case Kind::Linear: return T;
    case Kind::Power: return T > 0 ? std::pow(T, p) : 0.0;
    case Kind::Table: return table(i, j);
    }
    return T;
}

std::string Kernel::name() const {
    switch (kind) {
    case Kind::Linear: return "linear";
    case Kind::Power: return "power";
    case Kind::Table: return "table";
    }
    return "?";
}

PortNetwork::PortNetwork(std::vector<std::string> l, MatrixXd T, Kernel g)
    : labels(std::move(l)), travel_cost(std::move(T)), kernel(std::move(g)) {
    validate();
}

MatrixXd PortNetwork::kernel_matrix() const {
    const int K = size();
    MatrixXd G = MatrixXd::Zero(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
            if (i != j) G(i, j) = kernel(i, j, travel_cost(i, j));
    return G;
}

void PortNetwork::validate() const {
    const int K = size();
    if (K < 1) throw InvalidInput("network needs at least one port");
    for (int i = 0; i < K; ++i)
        for (int j = i + 1; j < K; ++j)
            if (labels[i] == labels[j]) throw InvalidInput("duplicate port label " + labels[i]);
    if (travel_cost.rows() != K || travel_cost.cols() != K)
        throw InvalidInput("travel cost matrix is not " + std::to_string(K) + "x" + std::to_string(K));
    if (kernel.kind == Kernel::Kind::Power && !(kernel.p > 0))
        throw InvalidInput("power kernel needs p > 0");
    if (kernel.kind == Kernel::Kind::Table && (kernel.table.rows() != K || kernel.table.cols() != K))
        throw InvalidInput("kernel table has the wrong shape");
    for (int i = 0; i < K; ++i) {
        if (travel_cost(i, i) != 0) throw InvalidInput("travel cost diagonal must be zero");
        for (int j = 0; j < K; ++j) {
            double T = travel_cost(i, j);
            if (!std::isfinite(T) || T < 0) throw InvalidInput("travel costs must be finite and >= 0");
            if (i == j) continue;
            double g = kernel(i, j, T);
            if (!std::isfinite(g) || g < 0) throw InvalidInput("kernel value must be finite and >= 0");
        }
    }
}

int PortNetwork::index_of(const std::string& label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

void CostParameters::validate(int K) const {
    if (congestion.size() != K) throw InvalidInput("congestion vector length differs from port count");
    if (capacities.size() != transport.size()) throw InvalidInput("one capacity per good required");
    if (transport.size() < 1) throw InvalidInput("at least one good required");
    if ((congestion.array() <= 0).any() || !congestion.allFinite()) throw InvalidInput("congestion coefficients must be > 0");
    if ((transport.array() < 0).any() || !transport.allFinite()) throw InvalidInput("transport coefficients must be >= 0");
    if ((capacities.array() <= 0).any() || !capacities.allFinite()) throw InvalidInput("capacities must be > 0");
}

MatrixXd GoodValues::margins(int good) const {
    const int K = static_cast<int>(values.cols());
    MatrixXd M(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) M(i, j) = values(good, j) - values(good, i);
    return M;
}

MeanField MeanField::uniform(const VectorXd& capacities, int K) {
    MeanField f;
    f.occupancy.resize(capacities.size(), K);
    for (int n = 0; n < capacities.size(); ++n) f.occupancy.row(n).setConstant(capacities(n) / K);
    return f;
}

double MeanField::mass_defect(const VectorXd& capacities) const {
    double worst = 0;
    for (int n = 0; n < occupancy.rows(); ++n)
        worst = std::max(worst, std::abs(occupancy.row(n).sum() - capacities(n)) / capacities(n));
    return worst;
}

void ControlPolicy::refresh_diagnostics() {
    const int N = static_cast<int>(transitions.size());
    const int K = N ? static_cast<int>(transitions[0].rows()) : 0;
    row_sum_residual.resize(N, K);
    has_negative = false;
    for (int n = 0; n < N; ++n) {
        row_sum_residual.row(n) = (transitions[n].rowwise().sum().array() - 1.0).transpose();
        if ((transitions[n].array() < 0).any()) has_negative = true;
    }
}

double ControlPolicy::max_row_sum_residual() const {
    return row_sum_residual.size() ? row_sum_residual.cwiseAbs().maxCoeff() : 0.0;
}

std::vector<std::array<int, 3>> ControlPolicy::negative_entries() const {
    std::vector<std::array<int, 3>> out;
    for (int n = 0; n < static_cast<int>(transitions.size()); ++n)
        for (int i = 0; i < transitions[n].rows(); ++i)
            for (int j = 0; j < transitions[n].cols(); ++j)
                if (transitions[n](i, j) < 0) out.push_back({n, i, j});
    return out;
}

double canonical_sum(std::vector<double> terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0;
    for (double t : terms) s += t;
    return s;
}

WeightMatrix compute_weights(const CostParameters& params, const PortNetwork& network, int good) {
    const int K = network.size();
    if (params.congestion.size() != K) throw InvalidInput("parameters and network disagree on K");
    if (good < 0 || good >= params.goods()) throw InvalidInput("good index out of range");
    const double c = params.transport(good);
    WeightMatrix w;
    w.raw.resize(K, K);
    w.normalized.resize(K, K);
    for (int i = 0; i < K; ++i) {
        for (int j = 0; j < K; ++j) {
            double d = params.congestion(j);
            if (j != i) d += c * network.kernel(i, j, network.travel_cost(i, j));
            if (!(d > 0)) {
                std::ostringstream os;
                os << "r_j + c g(T_ij) = " << d << " for pair " << network.labels[i] << " -> " << network.labels[j];
                throw NonPositiveDenominator(os.str());
            }
            w.raw(i, j) = 1.0 / d;
        }
        std::vector<double> row(K);
        for (int j = 0; j < K; ++j) row[j] = w.raw(i, j);
        const double s = canonical_sum(row);
        for (int j = 0; j < K; ++j) w.normalized(i, j) = w.raw(i, j) / s;
    }
    return w;
}

VectorXd aggregate_occupancy(const MeanField& field) {
    return field.occupancy.colwise().sum().transpose();
}

std::vector<MatrixXd> realized_flow(const MeanField& field, const ControlPolicy& policy) {
    std::vector<MatrixXd> out;
    for (int n = 0; n < field.occupancy.rows(); ++n)
        out.push_back(field.occupancy.row(n).transpose().asDiagonal() * policy.transitions[n]);
    return out;
}

double RowObjective::operator()(const VectorXd& q) const {
    double J = 0;
    for (int j = 0; j < q.size(); ++j) {
        const double x = phi_i * q(j);
        const double load = background(j) + x;
        J += gain(j) * q(j) - congestion(j) * load * load - transport(j) * x * x;
    }
    return J;
}

VectorXd RowObjective::gradient(const VectorXd& q) const {
    VectorXd g(q.size());
    for (int j = 0; j < q.size(); ++j) {
        const double x = phi_i * q(j);
        g(j) = gain(j) - 2 * congestion(j) * phi_i * (background(j) + x) - 2 * transport(j) * phi_i * x;
    }
    return g;
}

RowObjective row_objective(int origin, int good, const MeanField& field, const CostParameters& params,
                           const PortNetwork& network, const GoodValues& values) {
    const int K = network.size();
    RowObjective f;
    f.phi_i = field.occupancy(good, origin);
    f.background = aggregate_occupancy(field);
    f.congestion = params.congestion;
    f.gain.resize(K);
    f.transport.resize(K);
    for (int j = 0; j < K; ++j) {
        f.gain(j) = f.phi_i * (values.values(good, j) - values.values(good, origin));
        f.transport(j) = j == origin ? 0.0 : params.transport(good) * network.kernel(origin, j, network.travel_cost(origin, j));
    }
    return f;
}

double cost_functional(int origin, int good, const VectorXd& q, const MeanField& field,
                       const CostParameters& params, const PortNetwork& network, const GoodValues& values) {
    return row_objective(origin, good, field, params, network, values)(q);
}

VectorXd cost_gradient(int origin, int good, const VectorXd& q, const MeanField& field,
                       const CostParameters& params, const PortNetwork& network, const GoodValues& values) {
    return row_objective(origin, good, field, params, network, values).gradient(q);
}

}  // namespace pmfg
