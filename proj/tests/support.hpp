#pragma once
// helpers shared by the unit tests and the acceptance binary; the reference formulas here
// are written out directly so they do not go through the library's own evaluation paths

#include "portmfg/equilibrium.hpp"
#include "portmfg/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

namespace testing_support {

using namespace pmfg;

// K in [2, 6], N in [1, 3]; small margins keep every instance in the contraction regime
inline Instance generic_instance(std::uint64_t seed, int K = 0, int N = 0) {
    std::mt19937_64 rng(seed * 7919 + 17);
    SyntheticSpec s;
    s.seed = seed;
    s.K = K > 0 ? K : std::uniform_int_distribution<int>(2, 6)(rng);
    s.N = N > 0 ? N : std::uniform_int_distribution<int>(1, 3)(rng);
    s.v_lo = -0.05;
    s.v_hi = 0.05;
    return generate_instance(s);
}

// r = 1, c = 0, v = 0, T = 1 off the diagonal
inline Instance symmetric_instance(int K, int N = 1, double F = 1.0) {
    Instance inst;
    std::vector<std::string> labels;
    for (int k = 0; k < K; ++k) labels.push_back("P" + std::to_string(k + 1));
    MatrixXd T = MatrixXd::Ones(K, K);
    T.diagonal().setZero();
    inst.network = PortNetwork(labels, T);
    inst.params.congestion = VectorXd::Ones(K);
    inst.params.transport = VectorXd::Zero(N);
    inst.params.capacities = VectorXd::Constant(N, F);
    inst.values.values = MatrixXd::Zero(N, K);
    return inst;
}

// reference row objective for (origin i, good n) at field phi, written from the model definition
inline double J_ref(const Instance& in, const MeanField& f, int i, int n, const VectorXd& q) {
    const int K = in.network.size();
    const double phi_i = f.occupancy(n, i);
    double J = 0;
    for (int j = 0; j < K; ++j) {
        double bg = 0;
        for (int m = 0; m < f.occupancy.rows(); ++m) bg += f.occupancy(m, j);
        const double M = in.values.values(n, j) - in.values.values(n, i);
        const double x = phi_i * q(j);
        J += x * M - in.params.congestion(j) * (bg + x) * (bg + x);
        if (j != i) J -= in.params.transport(n) * x * x * in.network.kernel(i, j, in.network.travel_cost(i, j));
    }
    return J;
}

// central differences projected on {sum dq = 0}
inline VectorXd fd_grad_ref(const Instance& in, const MeanField& f, int i, int n, const VectorXd& q, double h) {
    const int K = static_cast<int>(q.size());
    VectorXd g(K);
    for (int j = 0; j < K; ++j) {
        VectorXd a = q, b = q;
        a(j) += h;
        b(j) -= h;
        g(j) = (J_ref(in, f, i, n, a) - J_ref(in, f, i, n, b)) / (2 * h);
    }
    return g.array() - g.mean();
}

inline double rel_diff(const VectorXd& a, const VectorXd& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

// distance in units in the last place
inline std::int64_t ulp_distance(double a, double b) {
    if (a == b) return 0;
    std::int64_t ia, ib;
    std::memcpy(&ia, &a, 8);
    std::memcpy(&ib, &b, 8);
    if (ia < 0) ia = std::numeric_limits<std::int64_t>::min() - ia;
    if (ib < 0) ib = std::numeric_limits<std::int64_t>::min() - ib;
    return ia > ib ? ia - ib : ib - ia;
}

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

}  // namespace testing_support
