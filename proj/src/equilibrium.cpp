#include "portmfg/equilibrium.hpp"
#include "portmfg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pmfg {

ControlPolicy optimal_control(const MeanField& field, const CostParameters& params, const PortNetwork& network,
                              const GoodValues& values, double occupancy_eps) {
    const int K = network.size();
    const int N = params.goods();
    if (field.occupancy.rows() != N || field.occupancy.cols() != K)
        throw InvalidInput("mean field shape does not match the instance");
    if (values.values.rows() != N || values.values.cols() != K)
        throw InvalidInput("value matrix shape does not match the instance");

    const VectorXd load = aggregate_occupancy(field);
    ControlPolicy policy;
    std::vector<double> terms(K);
    VectorXd bracket(K), d(K);
    for (int n = 0; n < N; ++n) {
        const WeightMatrix w = compute_weights(params, network, n);
        MatrixXd Q(K, K);
        for (int i = 0; i < K; ++i) {
            const double phi = field.occupancy(n, i);
            if (!(phi > occupancy_eps * params.capacities(n))) throw ZeroOccupancy(n, i);
            // half margin minus destination congestion, centred on the w-barycentre
            for (int j = 0; j < K; ++j)
                bracket(j) = 0.5 * (values.values(n, j) - values.values(n, i)) - params.congestion(j) * load(j);
            for (int l = 0; l < K; ++l) terms[l] = w.normalized(i, l) * bracket(l);
            const double centre = canonical_sum(terms);
            for (int j = 0; j < K; ++j) d(j) = w.raw(i, j) * (bracket(j) - centre) / phi;
            // d sums to zero analytically; strip the rounding residue so the row sum stays at 1
            for (int j = 0; j < K; ++j) terms[j] = d(j);
            const double drift = canonical_sum(terms);
            for (int j = 0; j < K; ++j) Q(i, j) = (d(j) - w.normalized(i, j) * drift) + w.normalized(i, j);
        }
        policy.transitions.push_back(std::move(Q));
    }
    policy.refresh_diagnostics();
    return policy;
}

VectorXd stationary_distribution(const MatrixXd& Q, double capacity, double uniqueness_tol) {
    const int K = static_cast<int>(Q.rows());
    if (K < 1 || Q.cols() != K) throw InvalidInput("transition matrix must be square");
    if (!Q.allFinite()) throw InvalidInput("transition matrix has non-finite entries");
    if (((Q.rowwise().sum().array() - 1.0).abs() > 1e-9).any())
        throw InvalidInput("transition matrix rows must sum to 1");
    if (K == 1) return VectorXd::Constant(1, capacity);

    const MatrixXd A = Q.transpose() - MatrixXd::Identity(K, K);
    Eigen::JacobiSVD<MatrixXd> svd(A);
    const VectorXd s = svd.singularValues();
    if (s(K - 2) < uniqueness_tol * Q.norm())
        throw NonUniqueStationary("eigenvalue 1 has more than one stationary direction (sigma = " +
                                  std::to_string(s(K - 2)) + ")");

    MatrixXd aug(K + 1, K);
    aug.topRows(K) = A;
    aug.row(K).setOnes();
    VectorXd rhs = VectorXd::Zero(K + 1);
    rhs(K) = capacity;
    return aug.colPivHouseholderQr().solve(rhs);
}

double stationarity_residual(const MeanField& field, const ControlPolicy& policy) {
    double worst = 0;
    for (int n = 0; n < field.occupancy.rows(); ++n) {
        const VectorXd phi = field.occupancy.row(n).transpose();
        worst = std::max(worst, (policy.transitions[n].transpose() * phi - phi).cwiseAbs().maxCoeff());
    }
    return worst;
}

static double projected_norm(VectorXd g) {
    g.array() -= g.mean();
    return g.cwiseAbs().maxCoeff();
}

double optimality_residual(const MeanField& field, const ControlPolicy& policy, const CostParameters& params,
                           const PortNetwork& network, const GoodValues& values) {
    double worst = 0;
    for (int n = 0; n < field.occupancy.rows(); ++n)
        for (int i = 0; i < network.size(); ++i) {
            const RowObjective J = row_objective(i, n, field, params, network, values);
            worst = std::max(worst, projected_norm(J.gradient(policy.transitions[n].row(i).transpose())));
        }
    return worst;
}

// largest r_j * sum_n sum_i w^n_ij; the linearised map has eigenvalues near -(that)
static double coupling_bound(const CostParameters& params, const PortNetwork& network) {
    VectorXd acc = VectorXd::Zero(network.size());
    for (int n = 0; n < params.goods(); ++n) acc += compute_weights(params, network, n).raw.colwise().sum().transpose();
    return (acc.array() * params.congestion.array()).maxCoeff();
}

EquilibriumResult fixed_point(const CostParameters& params, const PortNetwork& network, const GoodValues& values,
                              const std::optional<MeanField>& init, const FixedPointOptions& opt) {
    const int K = network.size();
    const int N = params.goods();
    params.validate(K);
    if (!(opt.damping > 0 && opt.damping <= 1)) throw InvalidInput("damping must lie in (0, 1]");
    if (!(opt.tol > 0)) throw InvalidInput("tolerance must be positive");

    MeanField phi = init ? *init : MeanField::uniform(params.capacities, K);
    if (phi.occupancy.rows() != N || phi.occupancy.cols() != K) throw InvalidInput("initial field has the wrong shape");
    if (phi.mass_defect(params.capacities) > 1e-9) throw InvalidInput("initial field violates the capacity constraint");

    double alpha = opt.damping;
    if (opt.adaptive) alpha = std::min(alpha, 1.0 / (1.0 + coupling_bound(params, network)));

    EquilibriumResult res;
    res.final_damping = alpha;
    MeanField next = phi;
    for (long it = 1; it <= opt.max_iter; ++it) {
        try {
            res.policy = optimal_control(phi, params, network, values, opt.occupancy_eps);
        } catch (const ZeroOccupancy& e) {
            throw ZeroOccupancy(e.good, e.port, it);
        }
        res.iterations = it;
        res.stationarity_residual = stationarity_residual(phi, res.policy);
        if (res.stationarity_residual <= opt.tol) {
            res.converged = true;
            break;
        }
        if (it == opt.max_iter) break;

        MatrixXd target(N, K);
        for (int n = 0; n < N; ++n) {
            try {
                target.row(n) = stationary_distribution(res.policy.transitions[n], params.capacities(n)).transpose();
            } catch (const NonUniqueStationary& e) {
                throw NonUniqueStationary(std::string(e.what()) + " at iteration " + std::to_string(it));
            }
        }
        // shrink the step while it would empty a port
        double a = alpha;
        for (;;) {
            next.occupancy = (1 - a) * phi.occupancy + a * target;
            bool ok = true;
            for (int n = 0; n < N && ok; ++n)
                ok = next.occupancy.row(n).minCoeff() > opt.occupancy_eps * params.capacities(n);
            if (ok) break;
            a *= 0.5;
            if (a < 1e-12) {
                Eigen::Index n, i;
                next.occupancy.minCoeff(&n, &i);
                throw ZeroOccupancy(static_cast<int>(n), static_cast<int>(i), it);
            }
        }
        res.final_damping = a;
        for (int n = 0; n < N; ++n)
            if (next.occupancy.row(n).cwiseAbs().maxCoeff() > 1e3 * params.capacities(n))
                throw DivergedField("field of good " + std::to_string(n) + " left the bounded region at iteration " +
                                    std::to_string(it));
        std::swap(phi, next);
    }
    res.field = phi;
    res.optimality_residual = optimality_residual(phi, res.policy, params, network, values);
    return res;
}

OmegaSystem build_omega(const CostParameters& params, const PortNetwork& network, const GoodValues& values, int good) {
    const int K = network.size();
    const WeightMatrix w = compute_weights(params, network, good);
    const VectorXd& r = params.congestion;
    const MatrixXd Mt = 0.5 * values.margins(good);

    OmegaSystem sys;
    sys.good = good;
    const VectorXd colw = w.raw.colwise().sum().transpose();  // sum_i w_ij
    VectorXd rel(K);                                          // per origin: sum_l wn_il Mt_il
    for (int i = 0; i < K; ++i) rel(i) = w.normalized.row(i).dot(Mt.row(i));
    sys.Mbar.resize(K);
    for (int j = 0; j < K; ++j) {
        double s = 0;
        for (int i = 0; i < K; ++i) s += w.raw(i, j) / colw(j) * (Mt(i, j) - rel(i));
        sys.Mbar(j) = s;
    }
    sys.R = r.cwiseInverse() + colw;
    sys.m = (colw.array() / r.array() * sys.Mbar.array()).matrix();
    const MatrixXd cross = w.raw.transpose() * w.normalized;  // (j, l): sum_i w_ij wn_il
    sys.C.resize(K, K);
    for (int j = 0; j < K; ++j)
        for (int l = 0; l < K; ++l) sys.C(j, l) = cross(j, l) * r(l) / r(j) + w.normalized(l, j) / r(j);
    sys.Omega = MatrixXd(sys.R.asDiagonal()) - sys.C;
    sys.determinant = sys.Omega.fullPivLu().determinant();
    sys.transposed_determinant = (MatrixXd(sys.R.asDiagonal()) - sys.C.transpose()).fullPivLu().determinant();
    const VectorXd s = Eigen::JacobiSVD<MatrixXd>(sys.Omega).singularValues();
    sys.condition_estimate = s(K - 1) > 0 ? s(0) / s(K - 1) : std::numeric_limits<double>::infinity();
    return sys;
}

ExistenceVerdict existence_check(const OmegaSystem& system, double tol_det, double cond_cap) {
    const int K = static_cast<int>(system.Omega.rows());
    ExistenceVerdict v;
    v.determinant = system.determinant;
    v.transposed_determinant = system.transposed_determinant;
    v.condition_estimate = system.condition_estimate;
    v.scale = system.Omega.cwiseAbs().maxCoeff();
    v.threshold = tol_det * std::pow(v.scale, K);
    v.unique = v.scale > 0 && std::abs(v.determinant) > v.threshold && v.condition_estimate < cond_cap;

    const VectorXd s = Eigen::JacobiSVD<MatrixXd>(system.Omega).singularValues();
    for (int k = 0; k < K; ++k)
        if (s(k) <= tol_det * s(0) || s(0) == 0) ++v.numerical_corank;

    MatrixXd bordered(K + 1, K);
    bordered.topRows(K) = system.Omega;
    bordered.row(K).setOnes();
    const VectorXd sb = Eigen::JacobiSVD<MatrixXd>(bordered).singularValues();
    v.bordered_condition = sb(K - 1) > 0 ? sb(0) / sb(K - 1) : std::numeric_limits<double>::infinity();
    v.mass_constrained_unique = v.bordered_condition < cond_cap;
    return v;
}

RepresentativeSolution representative_solve(const OmegaSystem& system, double capacity, double tol_det,
                                            double cond_cap) {
    const int K = static_cast<int>(system.Omega.rows());
    const ExistenceVerdict v = existence_check(system, tol_det, cond_cap);
    const double mnorm = system.m.cwiseAbs().maxCoeff();
    RepresentativeSolution out;
    if (v.unique) {
        out.path = "direct";
        out.phi = system.Omega.fullPivLu().solve(system.m);
        out.residual = (system.Omega * out.phi - system.m).cwiseAbs().maxCoeff();
        if (out.residual > 1e-8 * mnorm) throw DegenerateSystem("linear solve residual too large");
    } else if (v.mass_constrained_unique) {
        // Omega is rank deficient; the total-mass row pins the solution
        out.path = "mass_constrained";
        MatrixXd bordered(K + 1, K);
        bordered.topRows(K) = system.Omega;
        bordered.row(K).setOnes();
        VectorXd rhs(K + 1);
        rhs.head(K) = system.m;
        rhs(K) = capacity;
        out.phi = bordered.colPivHouseholderQr().solve(rhs);
        out.residual = (system.Omega * out.phi - system.m).cwiseAbs().maxCoeff();
        const double ref = std::max(mnorm, v.scale * out.phi.cwiseAbs().maxCoeff());
        if (out.residual > 1e-8 * ref) throw DegenerateSystem("Omega phi = m is inconsistent with the mass constraint");
    } else {
        throw DegenerateSystem("Omega is degenerate even with the mass constraint (corank " +
                               std::to_string(v.numerical_corank) + ")");
    }
    out.pre_rescale_mass = out.phi.sum();
    if (!(std::abs(out.pre_rescale_mass) > 1e-14 * std::max(1.0, out.phi.cwiseAbs().sum())) ||
        out.phi.cwiseAbs().maxCoeff() == 0)
        throw DegenerateSystem("solution carries no mass; cannot rescale to capacity");
    out.phi *= capacity / out.pre_rescale_mass;
    return out;
}

VectorXd fd_projected_gradient(const RowObjective& J, const VectorXd& q, double h) {
    const int K = static_cast<int>(q.size());
    VectorXd g(K);
    VectorXd qp = q, qm = q;
    for (int j = 0; j < K; ++j) {
        qp(j) = q(j) + h;
        qm(j) = q(j) - h;
        g(j) = (J(qp) - J(qm)) / (2 * h);
        qp(j) = qm(j) = q(j);
    }
    g.array() -= g.mean();
    return g;
}

VerificationReport verify_equilibrium(const EquilibriumResult& result, const CostParameters& params,
                                      const PortNetwork& network, const GoodValues& values, double fd_step,
                                      double tol) {
    VerificationReport rep;
    rep.tol = tol;
    ControlPolicy pol = result.policy;
    pol.refresh_diagnostics();
    rep.row_sum_deviation = pol.max_row_sum_residual();
    rep.stationarity = stationarity_residual(result.field, pol);
    for (int n = 0; n < params.goods(); ++n)
        for (int i = 0; i < network.size(); ++i) {
            const RowObjective J = row_objective(i, n, result.field, params, network, values);
            const VectorXd q = pol.transitions[n].row(i).transpose();
            VectorXd g = J.gradient(q);
            g.array() -= g.mean();
            const VectorXd fd = fd_projected_gradient(J, q, fd_step);
            rep.projected_gradient = std::max(rep.projected_gradient, g.cwiseAbs().maxCoeff());
            rep.fd_projected_gradient = std::max(rep.fd_projected_gradient, fd.cwiseAbs().maxCoeff());
            rep.fd_disagreement = std::max(rep.fd_disagreement, (g - fd).cwiseAbs().maxCoeff());
        }
    rep.pass = rep.row_sum_deviation <= 1e-10 && rep.stationarity <= tol && rep.projected_gradient <= 1e-5 &&
               rep.fd_disagreement <= 1e-4;
    return rep;
}

}  // namespace pmfg
