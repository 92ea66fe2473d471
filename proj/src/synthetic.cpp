#include "portmfg/synthetic.hpp"
#include "portmfg/errors.hpp"

#include <algorithm>
#include <cmath>

namespace pmfg {

void SyntheticSpec::validate() const {
    if (K < 1 || N < 1) throw InvalidInput("synthetic spec needs K >= 1 and N >= 1");
    crowd.validate();
    if (horizon_days < crowd.shift_days + crowd.window_days + K + 3)
        throw InvalidInput("horizon must cover s + m + K + 3 days");
    if (!(noise_sigma >= 0)) throw InvalidInput("noise sigma must be >= 0");
    if (!(r_lo > 0 && r_hi >= r_lo && r_bar > 0)) throw InvalidInput("congestion range must be positive and ordered");
    if (!(c_lo >= 0 && c_hi >= c_lo)) throw InvalidInput("transport range must be nonnegative and ordered");
    if (!(v_hi >= v_lo)) throw InvalidInput("value range is not ordered");
    if (!(T_lo >= 0 && T_hi >= T_lo)) throw InvalidInput("travel cost range must be nonnegative and ordered");
    if (!(F_lo > 0 && F_hi >= F_lo)) throw InvalidInput("capacity range must be positive and ordered");
    if (!(import_sigma >= 0 && inflow_sigma >= 0 && idio_sigma >= 0 && margin > 0 && tail_z > 0))
        throw InvalidInput("feature process settings must be nonnegative");
    parse_iso_date(start_date);
}

SyntheticSpec::Mode SyntheticSpec::parse_mode(const std::string& s) {
    if (s == "regression_exact") return Mode::RegressionExact;
    if (s == "equilibrium_consistent") return Mode::EquilibriumConsistent;
    throw InvalidInput("unknown synthetic mode '" + s + "'");
}

std::string SyntheticSpec::mode_name(Mode m) {
    return m == Mode::RegressionExact ? "regression_exact" : "equilibrium_consistent";
}

Instance generate_instance(const SyntheticSpec& spec) {
    spec.validate();
    const int K = spec.K, N = spec.N;
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 0u};
    std::mt19937_64 rng(seq);
    auto U = [&](double lo, double hi) { return lo + (hi - lo) * std::uniform_real_distribution<double>(0, 1)(rng); };

    Instance inst;
    VectorXd r(K);
    for (int j = 0; j < K; ++j) r(j) = U(spec.r_lo, spec.r_hi);
    r *= K * spec.r_bar / r.sum();
    VectorXd c(N);
    for (int n = 0; n < N; ++n) c(n) = U(spec.c_lo, spec.c_hi);
    MatrixXd T = MatrixXd::Zero(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
            if (i != j) T(i, j) = U(spec.T_lo, spec.T_hi);
    MatrixXd v(N, K);
    for (int n = 0; n < N; ++n) {
        for (int j = 0; j < K; ++j) v(n, j) = U(spec.v_lo, spec.v_hi);
        v.row(n).array() -= v.row(n).mean();
    }
    VectorXd F(N);
    for (int n = 0; n < N; ++n) F(n) = U(spec.F_lo, spec.F_hi);

    std::vector<std::string> labels;
    for (int k = 0; k < K; ++k) labels.push_back("P" + std::to_string(k + 1));
    inst.network = PortNetwork(labels, T, Kernel::linear());
    inst.params.congestion = r;
    inst.params.transport = c;
    inst.params.capacities = F;
    inst.values.values = v;
    inst.params.validate(K);
    return inst;
}

static void fill_slopes(Coefficients& out, const WeightMatrix& w, const VectorXd& r) {
    const int K = static_cast<int>(r.size());
    out.B.assign(K, MatrixXd::Zero(K, K));
    for (int l = 0; l < K; ++l)
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j)
                out.B[l](i, j) = w.raw(i, j) * (w.normalized(i, l) - (l == j ? 1.0 : 0.0)) * r(l);
    out.C = w.normalized;
}

Coefficients theoretical_coefficients(const CostParameters& params, const PortNetwork& network,
                                      const GoodValues& values, const MeanField& field, int good) {
    const int K = network.size();
    const WeightMatrix w = compute_weights(params, network, good);
    const MatrixXd Mt = 0.5 * values.margins(good);
    Coefficients out;
    out.A.resize(K, K);
    for (int i = 0; i < K; ++i) {
        const double centre = w.normalized.row(i).dot(Mt.row(i));
        for (int j = 0; j < K; ++j) out.A(i, j) = w.raw(i, j) * (Mt(i, j) - centre);
    }
    fill_slopes(out, w, params.congestion);
    const VectorXd load = aggregate_occupancy(field);
    out.predicted_flow = out.A;
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            double s = 0;
            for (int l = 0; l < K; ++l) s += out.B[l](i, j) * load(l);
            out.predicted_flow(i, j) += s + out.C(i, j) * field.occupancy(good, i);
        }
    return out;
}

Coefficients regression_exact_coefficients(const CostParameters& params, const PortNetwork& network,
                                           const GoodValues& values, int good) {
    const int K = network.size();
    const WeightMatrix w = compute_weights(params, network, good);
    Coefficients out;
    out.A = MatrixXd::Zero(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
            if (i != j) out.A(i, j) = (values.values(good, j) - values.values(good, i)) * w.raw(i, j);
    fill_slopes(out, w, params.congestion);
    return out;
}

std::vector<double> ar1_path(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int burn = 200;
    const double rho = 0.9, innov = std::sqrt(1 - rho * rho);
    double x = gauss(rng);
    std::vector<double> out(n);
    for (int t = 0; t < burn + n; ++t) {
        x = rho * x + innov * gauss(rng);
        if (t >= burn) out[t - burn] = x;
    }
    return out;
}

// positive log-AR(1) factor with unit mean
static std::vector<double> factor_path(int n, double sigma, std::mt19937_64& rng) {
    std::vector<double> p = ar1_path(n, rng);
    for (double& x : p) x = std::exp(sigma * x - 0.5 * sigma * sigma);
    return p;
}

static std::mt19937_64 series_rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
    return std::mt19937_64(seq);
}

// smallest z with z >= lo and z >= a G z + b, by monotone iteration (G >= 0)
static VectorXd least_feasible(const VectorXd& lo, const MatrixXd& G, double a, const VectorXd& b, VectorXd z) {
    for (int it = 0; it < 100000; ++it) {
        const VectorXd next = lo.cwiseMax(a * (G * z) + b);
        const double change = (next - z).cwiseAbs().maxCoeff();
        z = next;
        if (change <= 1e-13 * z.cwiseAbs().maxCoeff()) return z;
    }
    throw ProxyInversionFailure("import levels satisfying the positivity margins do not exist for this instance");
}

SimulationOutput simulate_series(const SyntheticSpec& spec, const Instance& inst, const Coefficients& truth) {
    spec.validate();
    const int K = inst.network.size();
    const int D = spec.horizon_days;
    const int s = spec.crowd.shift_days, m = spec.crowd.window_days;
    const int n = D - s - m;
    const VectorXd& r = inst.params.congestion;
    const MatrixXd& A = truth.A;
    const MatrixXd& C = truth.C;
    const double sg = spec.import_sigma, sf = spec.inflow_sigma, si = spec.idio_sigma, zq = spec.tail_z;

    // mean imports: every expected flow sits at least margin * max|A| above zero at the zq-quantile of
    // the factors, and self-flows S_i = z_i - sum_k Y_ki stay nonnegative
    double amax = 0;
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
            if (i != j) amax = std::max(amax, std::abs(A(i, j)));
    if (amax == 0) amax = 1.0;
    const double floor = spec.margin * amax;
    const double qlo = std::exp(-zq * sg - 0.5 * sg * sg);
    const double spread = std::exp(zq * si);
    MatrixXd Gm = C.transpose();
    Gm.diagonal().setZero();
    auto lower = [&](const MatrixXd& extra) {
        VectorXd lo(K);
        for (int i = 0; i < K; ++i) {
            double need = 0;
            for (int j = 0; j < K; ++j)
                if (j != i) need = std::max(need, (floor - A(i, j) + extra(i, j)) / C(i, j) / qlo);
            lo(i) = need;
        }
        return lo;
    };
    VectorXd inflow_need(K);
    for (int i = 0; i < K; ++i) {
        double a = 0;
        for (int k = 0; k < K; ++k)
            if (k != i) a += A(k, i);
        inflow_need(i) = (std::max(a, 0.0) + floor) / qlo;
    }
    MatrixXd extra = MatrixXd::Zero(K, K);
    VectorXd lo = lower(extra);
    VectorXd zbar = least_feasible(lo, Gm, spread * spread, spread * inflow_need, lo);
    auto level = [&](const VectorXd& z) { return (r.array() * z.array()).maxCoeff() * std::exp(zq * (sf + 3 * si)) * 1.1; };
    double L = level(zbar);
    // port-specific inflow noise enters Y through B; widen the margins once to absorb it
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            if (i == j) continue;
            double acc = 0;
            for (int l = 0; l < K; ++l) acc += std::abs(truth.B[l](i, j)) * L / r(l);
            extra(i, j) = acc * zq * si;
        }
    const VectorXd lo2 = lower(extra);
    if ((lo2.array() > zbar.array()).any()) {
        lo = lo.cwiseMax(lo2);
        const VectorXd need2 = inflow_need + extra.colwise().sum().transpose() / qlo;
        zbar = least_feasible(lo, Gm, spread * spread, spread * need2, zbar.cwiseMax(lo));
        L = level(zbar);
    }

    std::mt19937_64 rng = series_rng(spec.seed);
    const std::vector<double> gcom = factor_path(D, sg, rng);
    const std::vector<double> fcom = factor_path(D, sf, rng);
    MatrixXd z(D, K), in(D, K);
    for (int i = 0; i < K; ++i) {
        const auto idio = factor_path(D, si, rng);
        for (int t = 0; t < D; ++t) z(t, i) = zbar(i) * gcom[t] * idio[t];
    }
    for (int l = 0; l < K; ++l) {
        const auto idio = factor_path(D, si, rng);
        for (int t = 0; t < D; ++t) in(t, l) = L / r(l) * gcom[t] * fcom[t] * idio[t];
    }
    MatrixXd X(n, K);
    for (int l = 0; l < K; ++l) {
        std::vector<double> col(D);
        for (int t = 0; t < D; ++t) col[t] = in(t, l);
        const auto p = crowdedness_proxy(col, spec.crowd);
        for (int t = 0; t < n; ++t) X(t, l) = p[t];
    }
    const VectorXd Xbar = (L / r.array()).matrix();

    SimulationOutput out;
    out.mean_imports = zbar;
    out.inflow_level = L;
    out.calibrated_good = "g1";
    const Day d0 = parse_iso_date(spec.start_date);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto emit = [&](int t, int i, int j, const char* good, double q) {
        if (q < 0) {
            ++out.truncated;
            q = 0;
        }
        if (q != 0) out.series.records.push_back({d0 + t, inst.network.labels[i], inst.network.labels[j], good, q});
    };
    MatrixXd Y(K, K);
    for (int t = 0; t < D; ++t) {
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
                if (i == j) continue;
                double y = A(i, j) + C(i, j) * z(t, i);
                for (int l = 0; l < K; ++l) y += truth.B[l](i, j) * (t < n ? X(t, l) : Xbar(l));
                if (spec.noise_sigma > 0) y *= 1.0 + spec.noise_sigma * gauss(rng);
                if (y < 0) {
                    ++out.truncated;
                    y = 0;
                }
                Y(i, j) = y;
            }
        for (int i = 0; i < K; ++i) {
            double self = z(t, i);
            for (int k = 0; k < K; ++k)
                if (k != i) self -= Y(k, i);
            for (int j = 0; j < K; ++j)
                if (j != i && Y(i, j) != 0)
                    out.series.records.push_back({d0 + t, inst.network.labels[i], inst.network.labels[j], "g1", Y(i, j)});
            emit(t, i, i, "g1", self);
        }
        // background good: tops up each port's inflow to its drawn total
        for (int l = 0; l < K; ++l) emit(t, l, l, "g2", in(t, l) - z(t, l));
    }
    out.records = static_cast<long>(out.series.records.size());
    return out;
}

SimulationOutput simulate_series(const SyntheticSpec& spec, const Instance& inst, const EquilibriumResult& eq) {
    spec.validate();
    const int K = inst.network.size();
    const int N = inst.params.goods();
    const Day d0 = parse_iso_date(spec.start_date);
    std::mt19937_64 rng = series_rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    SimulationOutput out;
    const auto flows = realized_flow(eq.field, eq.policy);
    for (int t = 0; t < spec.horizon_days; ++t)
        for (int g = 0; g < N; ++g)
            for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j) {
                    double q = flows[g](i, j);
                    if (spec.noise_sigma > 0) q *= 1.0 + spec.noise_sigma * gauss(rng);
                    if (q < 0) {
                        ++out.truncated;
                        q = 0;
                    }
                    if (q != 0)
                        out.series.records.push_back({d0 + t, inst.network.labels[i], inst.network.labels[j],
                                                      "g" + std::to_string(g + 1), q});
                }
    out.records = static_cast<long>(out.series.records.size());
    return out;
}

std::vector<double> invert_proxy(const std::vector<double>& X, const CrowdednessConfig& cfg) {
    cfg.validate();
    const int s = cfg.shift_days, m = cfg.window_days;
    const long n = static_cast<long>(X.size());
    if (n < 1) throw InvalidInput("empty proxy path");
    std::vector<double> in(n + s + m, X[0]);
    for (long t = 1; t < n; ++t) {
        in[t + s + m] = m * (X[t] - X[t - 1]) + in[t + s];
        if (in[t + s + m] < 0)
            throw ProxyInversionFailure("proxy path needs a negative inflow on day " + std::to_string(t + s + m));
    }
    if (X[0] < 0) throw ProxyInversionFailure("proxy path starts negative");
    return in;
}

}  // namespace pmfg
