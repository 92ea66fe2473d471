#pragma once
#include "portmfg/model.hpp"

#include <optional>

namespace pmfg {

struct EquilibriumResult {
    MeanField field;
    ControlPolicy policy;
    long iterations = 0;
    double stationarity_residual = 0;
    double optimality_residual = 0;
    bool converged = false;
    double final_damping = 0;  // step actually used on the last update
};

struct FixedPointOptions {
    double damping = 0.5;
    double tol = 1e-10;
    long max_iter = 10000;
    // cap the step by 1/(1 + rho) with rho the spectral bound of the map; see README
    bool adaptive = true;
    double occupancy_eps = 1e-12;  // relative to F^n
};

// closed-form maximiser of the row objective for every (good, origin)
ControlPolicy optimal_control(const MeanField& field, const CostParameters& params, const PortNetwork& network,
                              const GoodValues& values, double occupancy_eps = 1e-12);

// phi Q = phi, sum phi = F, by a direct augmented solve
VectorXd stationary_distribution(const MatrixXd& Q, double capacity, double uniqueness_tol = 1e-8);

// max_n || phi^n Q^n - phi^n ||_inf
double stationarity_residual(const MeanField& field, const ControlPolicy& policy);

// max-norm over rows of the objective gradient projected on {sum dq = 0}
double optimality_residual(const MeanField& field, const ControlPolicy& policy, const CostParameters& params,
                           const PortNetwork& network, const GoodValues& values);

EquilibriumResult fixed_point(const CostParameters& params, const PortNetwork& network, const GoodValues& values,
                              const std::optional<MeanField>& init = std::nullopt,
                              const FixedPointOptions& opt = {});

struct OmegaSystem {
    VectorXd R;
    VectorXd m;
    MatrixXd C;
    MatrixXd Omega;
    VectorXd Mbar;
    double determinant = 0;
    double transposed_determinant = 0;  // det(diag(R) - C^T)
    double condition_estimate = 0;
    int good = 0;
};

OmegaSystem build_omega(const CostParameters& params, const PortNetwork& network, const GoodValues& values,
                        int good = 0);

struct ExistenceVerdict {
    bool unique = false;
    double determinant = 0;
    double transposed_determinant = 0;
    double scale = 0;       // max |Omega_jl|
    double threshold = 0;   // tol_det * scale^K
    double condition_estimate = 0;
    int numerical_corank = 0;
    // [Omega; 1^T] has full column rank: unique once total mass is fixed
    bool mass_constrained_unique = false;
    double bordered_condition = 0;
    std::string verdict() const { return unique ? "unique" : "degenerate"; }
};

ExistenceVerdict existence_check(const OmegaSystem& system, double tol_det = 1e-10, double cond_cap = 1e12);

struct RepresentativeSolution {
    VectorXd phi;
    double pre_rescale_mass = 0;
    double residual = 0;       // ||Omega phi - m||_inf before rescaling
    std::string path;          // "direct" or "mass_constrained"
};

RepresentativeSolution representative_solve(const OmegaSystem& system, double capacity, double tol_det = 1e-10,
                                            double cond_cap = 1e12);

struct VerificationReport {
    double row_sum_deviation = 0;
    double stationarity = 0;
    double projected_gradient = 0;   // analytic
    double fd_projected_gradient = 0;
    double fd_disagreement = 0;
    double tol = 0;
    bool pass = false;
};

VerificationReport verify_equilibrium(const EquilibriumResult& result, const CostParameters& params,
                                      const PortNetwork& network, const GoodValues& values, double fd_step = 1e-6,
                                      double tol = 1e-10);

// central differences of the row objective, projected on the simplex tangent space
VectorXd fd_projected_gradient(const RowObjective& J, const VectorXd& q, double h);

}  // namespace pmfg
