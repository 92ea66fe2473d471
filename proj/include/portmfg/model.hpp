#pragma once
#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace pmfg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// transport kernel g applied to travel costs
struct Kernel {
    enum class Kind { Linear, Power, Table };
    Kind kind = Kind::Linear;
    double p = 1.0;   // Power exponent
    MatrixXd table;   // Table values, indexed by (origin, destination)

    static Kernel linear() { return {}; }
    static Kernel power(double p) { Kernel k; k.kind = Kind::Power; k.p = p; return k; }
    static Kernel tabulated(MatrixXd t) { Kernel k; k.kind = Kind::Table; k.table = std::move(t); return k; }

    double operator()(int i, int j, double T) const;
    std::string name() const;
};

struct PortNetwork {
    std::vector<std::string> labels;
    MatrixXd travel_cost;
    Kernel kernel;

    PortNetwork() = default;
    PortNetwork(std::vector<std::string> labels, MatrixXd T, Kernel g = Kernel::linear());

    int size() const { return static_cast<int>(labels.size()); }
    // g(T_ij) for every pair; zero on the diagonal
    MatrixXd kernel_matrix() const;
    // throws InvalidInput
    void validate() const;
    int index_of(const std::string& label) const;  // -1 if absent
};

struct CostParameters {
    VectorXd congestion;   // r_j, K
    VectorXd transport;    // c_n, N
    VectorXd capacities;   // F^n, N

    int goods() const { return static_cast<int>(transport.size()); }
    void validate(int K) const;
};

struct GoodValues {
    MatrixXd values;  // N x K

    // M_ij = v_j - v_i
    MatrixXd margins(int good) const;
};

struct MeanField {
    MatrixXd occupancy;  // N x K

    static MeanField uniform(const VectorXd& capacities, int K);
    // max_n |sum_i phi^n_i - F^n| / F^n
    double mass_defect(const VectorXd& capacities) const;
    bool nonnegative() const { return (occupancy.array() >= 0).all(); }
};

struct ControlPolicy {
    std::vector<MatrixXd> transitions;  // one K x K matrix per good
    MatrixXd row_sum_residual;          // N x K
    bool has_negative = false;

    void refresh_diagnostics();
    double max_row_sum_residual() const;
    // (n, i, j) triples with Q < 0
    std::vector<std::array<int, 3>> negative_entries() const;
};

struct WeightMatrix {
    MatrixXd raw;
    MatrixXd normalized;
};

// sum that does not depend on the order of the terms (sorted, then accumulated)
double canonical_sum(std::vector<double> terms);

WeightMatrix compute_weights(const CostParameters& params, const PortNetwork& network, int good);

VectorXd aggregate_occupancy(const MeanField& field);

// flow[n](i, j) = phi^n_i Q^n_ij
std::vector<MatrixXd> realized_flow(const MeanField& field, const ControlPolicy& policy);

// J(q) = sum_j phi_i q_j M_ij - sum_j r_j (phi._j + phi_i q_j)^2 - c sum_{j!=i} (phi_i q_j)^2 g_ij
// with the coefficients frozen for one (origin, good)
struct RowObjective {
    VectorXd gain;        // phi_i M_ij
    VectorXd background;  // phi._j
    VectorXd congestion;  // r_j
    VectorXd transport;   // c g_ij, zero at j = i
    double phi_i = 0;

    double operator()(const VectorXd& q) const;
    VectorXd gradient(const VectorXd& q) const;
};

RowObjective row_objective(int origin, int good, const MeanField& field, const CostParameters& params,
                           const PortNetwork& network, const GoodValues& values);

// reduced objective of coordinator (origin, good) evaluated on an arbitrary row q
double cost_functional(int origin, int good, const VectorXd& q, const MeanField& field,
                       const CostParameters& params, const PortNetwork& network, const GoodValues& values);

// analytic gradient of cost_functional with respect to q
VectorXd cost_gradient(int origin, int good, const VectorXd& q, const MeanField& field,
                       const CostParameters& params, const PortNetwork& network, const GoodValues& values);

}  // namespace pmfg
