// Step-2 calibration: min sum_{i!=j} (A_ij (r_j + c g_ij) - (v_j - v_i))^2
// subject to c >= 0, r >= r_min, sum r = K r_bar, sum v = 0.
// The residual is linear in p = (c, r, v), so each Gauss-Newton subproblem is solved
// exactly on the current active set (primal active-set method for bounded least squares).
#include "portmfg/errors.hpp"
#include "portmfg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace pmfg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Problem {
    int K = 0;
    int P = 0;
    MatrixXd J;    // residual = J p  (no constant term)
    MatrixXd E;    // equality rows
    VectorXd e;
    VectorXd lb;   // -inf for v
};

struct Run {
    VectorXd p;
    double objective = kInf;
    bool converged = false;
    int iterations = 0;
};

// min ||J_F x + J_W p_W||  s.t.  E_F x = e - E_W p_W, minimum-norm in flat directions
VectorXd solve_subproblem(const Problem& pr, const std::vector<int>& F, const VectorXd& p,
                          const std::vector<bool>& active) {
    const int nf = static_cast<int>(F.size());
    VectorXd fixed = VectorXd::Zero(pr.P);
    for (int k = 0; k < pr.P; ++k)
        if (active[k]) fixed(k) = p(k);
    const VectorXd b = -(pr.J * fixed);
    const VectorXd e = pr.e - pr.E * fixed;
    MatrixXd JF(pr.J.rows(), nf), EF(pr.E.rows(), nf);
    for (int a = 0; a < nf; ++a) {
        JF.col(a) = pr.J.col(F[a]);
        EF.col(a) = pr.E.col(F[a]);
    }
    Eigen::JacobiSVD<MatrixXd> svd(EF, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const VectorXd s = svd.singularValues();
    int rank = 0;
    for (int k = 0; k < s.size(); ++k)
        if (s(k) > 1e-12 * std::max(1.0, s(0))) ++rank;
    VectorXd x0 = VectorXd::Zero(nf);
    for (int k = 0; k < rank; ++k) x0 += svd.matrixV().col(k) * (svd.matrixU().col(k).dot(e) / s(k));
    const MatrixXd Z = svd.matrixV().rightCols(nf - rank);
    if (Z.cols() == 0) return x0;
    const VectorXd y = (JF * Z).completeOrthogonalDecomposition().solve(b - JF * x0);
    return x0 + Z * y;
}

Run active_set(const Problem& pr, VectorXd p, int max_iter) {
    Run run;
    std::vector<bool> active(pr.P, false);
    for (int k = 0; k < pr.P; ++k) active[k] = std::isfinite(pr.lb(k)) && p(k) <= pr.lb(k);
    const double jscale = std::max(1.0, pr.J.cwiseAbs().maxCoeff());

    for (int it = 1; it <= max_iter; ++it) {
        run.iterations = it;
        std::vector<int> F;
        for (int k = 0; k < pr.P; ++k)
            if (!active[k]) F.push_back(k);
        const VectorXd x = solve_subproblem(pr, F, p, active);

        double step = 1.0;
        int block = -1;
        for (int a = 0; a < static_cast<int>(F.size()); ++a) {
            const int k = F[a];
            const double dk = x(a) - p(k);
            if (std::isfinite(pr.lb(k)) && dk < 0 && x(a) < pr.lb(k)) {
                const double t = (pr.lb(k) - p(k)) / dk;
                if (t < step) { step = t; block = k; }
            }
        }
        if (block < 0) {
            for (int a = 0; a < static_cast<int>(F.size()); ++a) p(F[a]) = x(a);
            // multipliers of the active bounds
            const VectorXd grad = pr.J.transpose() * (pr.J * p);
            MatrixXd EF(pr.E.rows(), F.size());
            VectorXd gF(F.size());
            for (int a = 0; a < static_cast<int>(F.size()); ++a) {
                EF.col(a) = pr.E.col(F[a]);
                gF(a) = grad(F[a]);
            }
            const VectorXd mu = EF.transpose().completeOrthogonalDecomposition().solve(gF);
            const double tol = 1e-10 * jscale * jscale * std::max(1.0, p.cwiseAbs().maxCoeff());
            int release = -1;
            double worst = -tol;
            for (int k = 0; k < pr.P; ++k) {
                if (!active[k]) continue;
                const double lam = grad(k) - pr.E.col(k).dot(mu);
                if (lam < worst) { worst = lam; release = k; }
            }
            if (release < 0) {
                run.converged = true;
                break;
            }
            active[release] = false;
        } else {
            for (int a = 0; a < static_cast<int>(F.size()); ++a) p(F[a]) += step * (x(a) - p(F[a]));
            p(block) = pr.lb(block);
            active[block] = true;
        }
    }
    run.p = p;
    run.objective = (pr.J * p).squaredNorm();
    return run;
}

}  // namespace

double calibration_objective(const MatrixXd& A, const MatrixXd& G, double c, const VectorXd& r, const VectorXd& v) {
    double f = 0;
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) {
            if (i == j || !std::isfinite(A(i, j))) continue;
            const double res = A(i, j) * (r(j) + c * G(i, j)) - (v(j) - v(i));
            f += res * res;
        }
    return f;
}

CalibrationResult calibrate(const MatrixXd& A, const PortNetwork& network, const CalibrationConfig& cfg) {
    network.validate();
    const int K = network.size();
    if (A.rows() != K || A.cols() != K) throw InvalidInput("intercept matrix must be K x K");
    if (!(cfg.r_min > 0)) throw InvalidInput("r_min must be > 0 so that weights stay finite");
    if (!(cfg.r_bar > 0)) throw InvalidInput("r_bar must be > 0");
    if (cfg.r_min > cfg.r_bar)
        throw GaugeInfeasible("r_min = " + std::to_string(cfg.r_min) + " exceeds the gauge mean r_bar = " +
                              std::to_string(cfg.r_bar));
    if (cfg.starts < 1) throw InvalidInput("need at least one start");

    const MatrixXd G = network.kernel_matrix();
    CalibrationResult out;
    std::vector<std::array<int, 2>> routes;
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            if (i == j) continue;
            if (std::isfinite(A(i, j))) routes.push_back({i, j});
            else out.excluded_routes.push_back({i, j});
        }
    if (routes.empty()) throw SolverFailure("no usable routes");

    Problem pr;
    pr.K = K;
    pr.P = 1 + 2 * K;
    pr.J = MatrixXd::Zero(static_cast<Eigen::Index>(routes.size()), pr.P);
    for (size_t q = 0; q < routes.size(); ++q) {
        const int i = routes[q][0], j = routes[q][1];
        pr.J(q, 0) = A(i, j) * G(i, j);
        pr.J(q, 1 + j) = A(i, j);
        pr.J(q, 1 + K + j) -= 1.0;
        pr.J(q, 1 + K + i) += 1.0;
    }
    pr.E = MatrixXd::Zero(2, pr.P);
    pr.E.row(0).segment(1, K).setOnes();
    pr.E.row(1).segment(1 + K, K).setOnes();
    pr.e = Eigen::Vector2d(K * cfg.r_bar, 0.0);
    pr.lb = VectorXd::Constant(pr.P, -kInf);
    pr.lb(0) = 0.0;
    pr.lb.segment(1, K).setConstant(cfg.r_min);

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Run> runs;
    for (int s = 0; s < cfg.starts; ++s) {
        VectorXd p0(pr.P);
        if (s == 0) {
            p0(0) = 0.5;
            p0.segment(1, K).setConstant(cfg.r_bar);
            p0.segment(1 + K, K).setZero();
        } else {
            p0(0) = 2.0 * unif(rng);
            VectorXd d(K);
            for (int k = 0; k < K; ++k) d(k) = -std::log(1.0 - unif(rng));
            p0.segment(1, K) = VectorXd::Constant(K, cfg.r_min) + (K * (cfg.r_bar - cfg.r_min)) * d / d.sum();
            for (int k = 0; k < K; ++k) p0(1 + K + k) = gauss(rng);
            p0.segment(1 + K, K).array() -= p0.segment(1 + K, K).mean();
        }
        runs.push_back(active_set(pr, p0, cfg.max_active_set_iter));
    }

    out.starts = cfg.starts;
    for (int s = 0; s < cfg.starts; ++s) {
        if (!runs[s].converged) continue;
        ++out.starts_converged;
        if (out.best_start < 0 || runs[s].objective < runs[out.best_start].objective) out.best_start = s;
    }
    if (out.best_start < 0) throw SolverFailure("no calibration start converged");
    const VectorXd& best = runs[out.best_start].p;
    const double ref = std::max(best.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    for (const auto& r : runs)
        if (r.converged) out.start_spread = std::max(out.start_spread, (r.p - best).cwiseAbs().maxCoeff() / ref);

    out.transport_cost = best(0);
    out.congestion = best.segment(1, K);
    out.values = best.segment(1 + K, K);
    // close the location gauge in floating point: the last value cancels the running sum exactly
    double head = 0;
    for (int j = 0; j + 1 < K; ++j) head += out.values(j);
    out.values(K - 1) = -head;
    out.objective = calibration_objective(A, G, out.transport_cost, out.congestion, out.values);
    out.residuals = MatrixXd::Constant(K, K, std::numeric_limits<double>::quiet_NaN());
    for (const auto& rt : routes) {
        const int i = rt[0], j = rt[1];
        out.residuals(i, j) = A(i, j) * (out.congestion(j) + out.transport_cost * G(i, j)) - (out.values(j) - out.values(i));
    }
    out.r_bar = cfg.r_bar;
    out.r_min = cfg.r_min;
    out.sum_r = out.congestion.sum();
    out.sum_v = 0;
    for (int j = 0; j < K; ++j) out.sum_v += out.values(j);

    // curvature on the gauge tangent space
    Eigen::JacobiSVD<MatrixXd> esvd(pr.E, Eigen::ComputeFullV);
    const MatrixXd Z = esvd.matrixV().rightCols(pr.P - 2);
    const MatrixXd H = Z.transpose() * pr.J.transpose() * pr.J * Z;
    const VectorXd ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(H).eigenvalues();
    out.min_curvature = ev(0);
    out.max_curvature = ev(ev.size() - 1);
    out.flat_direction = !(out.min_curvature > 1e-10 * std::max(out.max_curvature, 1e-300));
    return out;
}

}  // namespace pmfg
