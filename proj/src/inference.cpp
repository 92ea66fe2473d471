#include "portmfg/inference.hpp"
#include "portmfg/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

namespace pmfg {

Day parse_iso_date(const std::string& s) {
    auto bad = [&] { return InvalidInput("not an ISO-8601 date: '" + s + "'"); };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
    for (int k : {0, 1, 2, 3, 5, 6, 8, 9})
        if (s[k] < '0' || s[k] > '9') throw bad();
    const int y = std::stoi(s.substr(0, 4));
    const unsigned mo = static_cast<unsigned>(std::stoi(s.substr(5, 2)));
    const unsigned d = static_cast<unsigned>(std::stoi(s.substr(8, 2)));
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo}, std::chrono::day{d}};
    if (!ymd.ok()) throw bad();
    return static_cast<Day>(std::chrono::sys_days{ymd}.time_since_epoch().count());
}

std::string format_iso_date(Day d) {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{d}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

Day FlowSeries::first_day() const {
    Day d = std::numeric_limits<Day>::max();
    for (const auto& r : records) d = std::min(d, r.date);
    return d;
}

Day FlowSeries::last_day() const {
    Day d = std::numeric_limits<Day>::min();
    for (const auto& r : records) d = std::max(d, r.date);
    return d;
}

std::vector<std::string> FlowSeries::goods() const {
    std::set<std::string> g;
    for (const auto& r : records) g.insert(r.good);
    return {g.begin(), g.end()};
}

FlowSeries FlowSeries::window(std::optional<Day> from, std::optional<Day> to) const {
    if (from && to && *from > *to) throw InvalidInput("date window is not ordered");
    FlowSeries out;
    for (const auto& r : records)
        if ((!from || r.date >= *from) && (!to || r.date <= *to)) out.records.push_back(r);
    return out;
}

DenseFlows DenseFlows::build(const FlowSeries& series, const std::vector<std::string>& labels) {
    DenseFlows f;
    f.K = static_cast<int>(labels.size());
    f.goods = series.goods();
    if (series.empty()) return f;
    f.first = series.first_day();
    f.days = series.last_day() - f.first + 1;
    f.data.assign(f.goods.size() * static_cast<size_t>(f.days) * f.K * f.K, 0.0);

    auto index = [&](const std::string& s) {
        return static_cast<int>(std::find(labels.begin(), labels.end(), s) - labels.begin());
    };
    std::set<std::string> unknown;
    for (const auto& r : series.records) {
        const int i = index(r.origin), j = index(r.destination);
        if (i == f.K) unknown.insert(r.origin);
        if (j == f.K) unknown.insert(r.destination);
        if (i == f.K || j == f.K) continue;
        f.at(f.good_index(r.good), r.date - f.first, i, j) += r.tons;
    }
    if (!unknown.empty()) {
        std::string msg = "flow endpoints missing from the network labels:";
        for (const auto& u : unknown) msg += " " + u;
        throw LabelMismatch(msg);
    }
    return f;
}

int DenseFlows::good_index(const std::string& g) const {
    auto it = std::find(goods.begin(), goods.end(), g);
    return it == goods.end() ? -1 : static_cast<int>(it - goods.begin());
}

std::vector<double> DenseFlows::total_inflow(int j) const {
    std::vector<double> in(days, 0.0);
    for (int g = 0; g < static_cast<int>(goods.size()); ++g)
        for (int t = 0; t < days; ++t)
            for (int i = 0; i < K; ++i) in[t] += at(g, t, i, j);
    return in;
}

void CrowdednessConfig::validate() const {
    if (shift_days < 0) throw InvalidInput("shift_days must be >= 0");
    if (window_days < 1) throw InvalidInput("window_days must be >= 1");
}

std::vector<double> crowdedness_proxy(const std::vector<double>& inflow, const CrowdednessConfig& cfg) {
    cfg.validate();
    const long n = static_cast<long>(inflow.size()) - cfg.shift_days - cfg.window_days;
    if (n <= 0) throw InsufficientHistory("need more than s + m = " + std::to_string(cfg.shift_days + cfg.window_days) +
                                          " days of inflow, have " + std::to_string(inflow.size()));
    std::vector<double> out(n);
    for (long t = 0; t < n; ++t) {
        double s = 0;
        for (int tau = 1; tau <= cfg.window_days; ++tau) s += inflow[t + cfg.shift_days + tau];
        out[t] = s / cfg.window_days;
    }
    return out;
}

std::vector<double> crowdedness_proxy(const DenseFlows& flows, const CrowdednessConfig& cfg, int destination) {
    return crowdedness_proxy(flows.total_inflow(destination), cfg);
}

static MatrixXd proxy_matrix(const DenseFlows& flows, const CrowdednessConfig& cfg) {
    MatrixXd X;
    for (int l = 0; l < flows.K; ++l) {
        const auto p = crowdedness_proxy(flows, cfg, l);
        if (l == 0) X.resize(static_cast<Eigen::Index>(p.size()), flows.K);
        X.col(l) = Eigen::Map<const VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    }
    return X;
}

static RegressionDataset assemble(const DenseFlows& flows, const MatrixXd& X, int i, int j, int g) {
    RegressionDataset d;
    d.origin = i;
    d.destination = j;
    d.first_day = flows.first;
    const int n = static_cast<int>(X.rows());
    d.X = X;
    d.Y.resize(n);
    d.Z.resize(n);
    for (int t = 0; t < n; ++t) {
        d.Y(t) = flows.at(g, t, i, j);
        double z = 0;
        for (int k = 0; k < flows.K; ++k) z += flows.at(g, t, k, i);
        d.Z(t) = z;
    }
    return d;
}

RegressionDataset build_regression_dataset(const DenseFlows& flows, const CrowdednessConfig& cfg, int origin,
                                           int destination, int good) {
    if (origin < 0 || origin >= flows.K || destination < 0 || destination >= flows.K)
        throw InvalidInput("route endpoint out of range");
    if (good < 0 || good >= static_cast<int>(flows.goods.size())) throw InvalidInput("unknown good");
    cfg.validate();
    if (flows.days <= cfg.shift_days + cfg.window_days)
        throw EmptyDataset("date range of " + std::to_string(flows.days) + " days leaves no admissible sample");
    return assemble(flows, proxy_matrix(flows, cfg), origin, destination, good);
}

RegressionCoefficients ols_fit(const RegressionDataset& data, double ridge, double cond_cap) {
    const int n = data.n_obs();
    const int K = static_cast<int>(data.X.cols());
    const int p = K + 2;
    if (n < K + 3)
        throw EmptyDataset("need at least " + std::to_string(K + 3) + " observations, have " + std::to_string(n));
    if (ridge < 0) throw InvalidInput("ridge penalty must be >= 0");

    MatrixXd D(n, p);
    D.col(0).setOnes();
    D.middleCols(1, K) = data.X;
    D.col(p - 1) = data.Z;

    RegressionCoefficients out;
    out.origin = data.origin;
    out.destination = data.destination;
    out.n_obs = n;
    out.ridge = ridge;

    // conditioning of the column-equilibrated design
    VectorXd norms = D.colwise().norm().transpose();
    MatrixXd Dn = D;
    for (int k = 0; k < p; ++k)
        if (norms(k) > 0) Dn.col(k) /= norms(k);
    Eigen::JacobiSVD<MatrixXd> svd(Dn, Eigen::ComputeThinV);
    const VectorXd s = svd.singularValues();
    out.condition_number = s(p - 1) > 0 ? s(0) / s(p - 1) : std::numeric_limits<double>::infinity();
    if (ridge == 0 && !(out.condition_number <= cond_cap)) {
        auto name = [&](int k) {
            return k == 0 ? std::string("intercept") : k == p - 1 ? std::string("Z") : "X" + std::to_string(k);
        };
        std::string cols;
        const VectorXd v = svd.matrixV().col(p - 1);
        for (int k = 0; k < p; ++k)
            if (std::abs(v(k)) > 0.1) cols += (cols.empty() ? "" : ", ") + name(k);
        throw RankDeficient("design condition number " + std::to_string(out.condition_number) +
                            " exceeds cap; collinear columns: " + cols);
    }

    MatrixXd aug = D;
    VectorXd rhs = data.Y;
    if (ridge > 0) {
        aug.conservativeResize(n + p - 1, p);
        aug.bottomRows(p - 1).setZero();
        rhs.conservativeResize(n + p - 1);
        rhs.tail(p - 1).setZero();
        for (int k = 1; k < p; ++k) aug(n + k - 1, k) = std::sqrt(ridge);
    }
    Eigen::HouseholderQR<MatrixXd> qr(aug);
    const VectorXd beta = qr.solve(rhs);
    out.intercept = beta(0);
    out.crowd_slopes = beta.segment(1, K);
    out.self_slope = beta(p - 1);

    out.residuals = data.Y - D * beta;
    const double rss = out.residuals.squaredNorm();
    const double tss = (data.Y.array() - data.Y.mean()).matrix().squaredNorm();
    out.r_squared = tss > 0 ? std::clamp(1.0 - rss / tss, 0.0, 1.0) : (rss == 0 ? 1.0 : 0.0);
    out.residual_variance = rss / (n - p);

    const MatrixXd R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    const MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(p, p));
    const MatrixXd Hinv = Rinv * Rinv.transpose();
    const MatrixXd cov = out.residual_variance * (ridge > 0 ? MatrixXd(Hinv * (D.transpose() * D) * Hinv) : Hinv);
    out.standard_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

InferenceReport infer_pipeline(const FlowSeries& raw, const PortNetwork& network, const InferenceConfig& cfg) {
    network.validate();
    cfg.crowd.validate();
    const FlowSeries series = raw.window(cfg.date_from, cfg.date_to);
    if (series.empty()) throw EmptyDataset("flow series is empty");
    const int K = network.size();
    const DenseFlows flows = DenseFlows::build(series, network.labels);

    InferenceReport rep;
    rep.good = cfg.good.empty() ? flows.goods.front() : cfg.good;
    const int g = flows.good_index(rep.good);
    if (g < 0) throw InvalidInput("good '" + rep.good + "' does not occur in the flow series");
    if (flows.days <= cfg.crowd.shift_days + cfg.crowd.window_days)
        throw EmptyDataset("date range of " + std::to_string(flows.days) + " days leaves no admissible sample");

    const MatrixXd X = proxy_matrix(flows, cfg.crowd);
    rep.A = MatrixXd::Constant(K, K, std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            if (i == j) continue;
            RouteFit fit;
            fit.origin = i;
            fit.destination = j;
            try {
                fit.coef = ols_fit(assemble(flows, X, i, j, g), cfg.ridge, cfg.cond_cap);
                fit.ok = true;
                rep.A(i, j) = fit.coef.intercept;
                ++rep.usable_routes;
            } catch (const Error& e) {
                fit.error_code = e.code();
                fit.error = e.what();
            }
            rep.routes.push_back(std::move(fit));
        }
    if (rep.usable_routes < K + 1)
        throw SolverFailure("only " + std::to_string(rep.usable_routes) + " usable routes; calibration needs " +
                            std::to_string(K + 1));
    rep.calibration = calibrate(rep.A, network, cfg.calib);

    // theory-vs-estimate for B at the calibrated costs (diagnostic only)
    CostParameters cp;
    cp.congestion = rep.calibration.congestion;
    cp.transport = VectorXd::Constant(1, rep.calibration.transport_cost);
    cp.capacities = VectorXd::Ones(1);
    const WeightMatrix w = compute_weights(cp, network, 0);
    for (const auto& f : rep.routes) {
        if (!f.ok) continue;
        for (int l = 0; l < K; ++l) {
            const double th = w.raw(f.origin, f.destination) *
                              (w.normalized(f.origin, l) - (l == f.destination ? 1.0 : 0.0)) * cp.congestion(l);
            rep.b_theory_max_abs_diff = std::max(rep.b_theory_max_abs_diff, std::abs(th - f.coef.crowd_slopes(l)));
        }
    }
    return rep;
}

}  // namespace pmfg
