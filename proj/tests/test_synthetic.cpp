#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "portmfg/errors.hpp"

#include <map>

using namespace pmfg;
using namespace testing_support;

TEST_CASE("instances are deterministic and gauge fixed") {
    SyntheticSpec s;
    s.seed = 12345;
    s.N = 2;
    const Instance a = generate_instance(s), b = generate_instance(s);
    CHECK(a.params.congestion == b.params.congestion);
    CHECK(a.network.travel_cost == b.network.travel_cost);
    CHECK(a.values.values == b.values.values);
    CHECK(a.params.congestion.sum() == doctest::Approx(5.0).epsilon(1e-14));
    for (int n = 0; n < 2; ++n) CHECK(std::abs(a.values.values.row(n).sum()) <= 1e-14);
    s.seed = 12346;
    CHECK(generate_instance(s).params.congestion != a.params.congestion);
}

TEST_CASE("single-port spec") {
    SyntheticSpec s;
    s.K = 1;
    s.horizon_days = 200;
    const Instance in = generate_instance(s);
    CHECK(in.network.size() == 1);
    CHECK(in.params.congestion(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(in.values.values(0, 0) == 0.0);
}

TEST_CASE("spec validation") {
    SyntheticSpec s;
    s.horizon_days = 50;
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = SyntheticSpec{};
    s.r_lo = -1;
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = SyntheticSpec{};
    s.noise_sigma = -0.1;
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    CHECK_THROWS_AS(SyntheticSpec::parse_mode("bogus"), InvalidInput);
    CHECK(SyntheticSpec::mode_name(SyntheticSpec::parse_mode("equilibrium_consistent")) == "equilibrium_consistent");
}

TEST_CASE("generated congestion systems are unique once total mass is fixed") {
    int mass_unique = 0, plain_unique = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        SyntheticSpec s;
        s.seed = seed;
        const Instance in = generate_instance(s);
        const ExistenceVerdict v = existence_check(build_omega(in.params, in.network, in.values));
        mass_unique += v.mass_constrained_unique;
        plain_unique += v.unique;
    }
    CHECK(mass_unique == 100);
    // the unbordered determinant vanishes identically (r^T Omega = 0), so no draw is "unique" on its own
    CHECK(plain_unique == 0);
}

TEST_CASE("theoretical coefficients: flat values and the normalized weight") {
    const Instance sym = symmetric_instance(4);
    const Coefficients t = theoretical_coefficients(sym.params, sym.network, sym.values,
                                                    MeanField::uniform(sym.params.capacities, 4));
    CHECK(t.A.cwiseAbs().maxCoeff() == 0.0);
    const Instance in = generic_instance(6, 5, 1);
    const MeanField f = MeanField::uniform(in.params.capacities, 5);
    const Coefficients c = theoretical_coefficients(in.params, in.network, in.values, f);
    const WeightMatrix w = compute_weights(in.params, in.network, 0);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(ulp_distance(c.C(i, j), w.normalized(i, j)) <= 4);
    // B from the weights: w_ij (wn_il - 1{l = j}) r_l
    for (int l = 0; l < 5; ++l)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                CHECK(c.B[l](i, j) == doctest::Approx(w.raw(i, j) * (w.normalized(i, l) - (l == j)) * in.params.congestion(l))
                                          .epsilon(1e-14));
    // predicted flow reproduces the closed-form control at the field
    const ControlPolicy Q = optimal_control(f, in.params, in.network, in.values);
    const auto flow = realized_flow(f, Q);
    CHECK((c.predicted_flow - flow[0]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("regression-exact intercepts follow the calibration forward map") {
    SyntheticSpec s;
    s.seed = 3;
    const Instance in = generate_instance(s);
    const Coefficients c = regression_exact_coefficients(in.params, in.network, in.values);
    const MatrixXd g = in.network.kernel_matrix();
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            if (i != j)
                CHECK(c.A(i, j) == doctest::Approx((in.values.values(0, j) - in.values.values(0, i)) /
                                                   (in.params.congestion(j) + in.params.transport(0) * g(i, j)))
                                       .epsilon(1e-14));
}

TEST_CASE("regression-exact series: deterministic, nonnegative, few truncations") {
    long truncated = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        SyntheticSpec s;
        s.seed = seed;
        s.noise_sigma = 0.01;
        s.horizon_days = 400;
        const Instance in = generate_instance(s);
        const Coefficients co = regression_exact_coefficients(in.params, in.network, in.values);
        const SimulationOutput a = simulate_series(s, in, co);
        truncated += a.truncated;
        for (const auto& r : a.series.records) REQUIRE(r.tons >= 0);
        if (seed <= 3) {
            const SimulationOutput b = simulate_series(s, in, co);
            REQUIRE(a.series.records.size() == b.series.records.size());
            for (size_t k = 0; k < a.series.records.size(); ++k) CHECK(a.series.records[k].tons == b.series.records[k].tons);
        }
    }
    CHECK(truncated == 0);
}

TEST_CASE("equilibrium-consistent series conserves the field daily") {
    SyntheticSpec s;
    s.seed = 8;
    s.K = 4;
    s.N = 2;
    s.horizon_days = 120;
    s.mode = SyntheticSpec::Mode::EquilibriumConsistent;
    s.v_lo = -0.05;
    s.v_hi = 0.05;
    const Instance in = generate_instance(s);
    const EquilibriumResult eq = fixed_point(in.params, in.network, in.values);
    REQUIRE(eq.converged);
    const SimulationOutput sim = simulate_series(s, in, eq);
    std::map<std::tuple<Day, std::string, std::string>, double> out;
    for (const auto& r : sim.series.records) out[{r.date, r.good, r.origin}] += r.tons;
    CHECK(out.size() == static_cast<size_t>(120 * 2 * 4));
    for (const auto& [key, tons] : out) {
        const int n = std::stoi(std::get<1>(key).substr(1)) - 1;
        const int i = in.network.index_of(std::get<2>(key));
        CHECK(std::abs(tons - eq.field.occupancy(n, i)) <= 1e-9 * eq.field.occupancy(n, i));
    }
}

TEST_CASE("proxy inversion") {
    // X built from a known inflow path comes back exactly
    const CrowdednessConfig cfg{3, 4};
    std::vector<double> in(60);
    for (int t = 0; t < 60; ++t) in[t] = 10 + (t * 7) % 5;
    const auto X = crowdedness_proxy(in, cfg);
    std::vector<double> seeded(X.size());
    for (size_t t = 0; t < X.size(); ++t) seeded[t] = X[t];
    const auto back = invert_proxy(seeded, cfg);
    const auto X2 = crowdedness_proxy(back, cfg);
    REQUIRE(X2.size() == X.size());
    for (size_t t = 0; t < X.size(); ++t) CHECK(X2[t] == doctest::Approx(X[t]).epsilon(1e-12));
    // a sharp drop cannot be produced by nonnegative inflows
    std::vector<double> drop(20, 5.0);
    drop[10] = 0.0;
    CHECK_THROWS_AS(invert_proxy(drop, cfg), ProxyInversionFailure);
}

TEST_CASE("ar1 paths are standardized and persistent") {
    std::mt19937_64 rng(1);
    const auto p = ar1_path(20000, rng);
    double m = 0, v = 0, c = 0;
    for (double x : p) m += x;
    m /= p.size();
    for (size_t t = 0; t < p.size(); ++t) {
        v += (p[t] - m) * (p[t] - m);
        if (t) c += (p[t] - m) * (p[t - 1] - m);
    }
    CHECK(std::abs(m) < 0.15);
    CHECK(v / p.size() == doctest::Approx(1.0).epsilon(0.15));
    CHECK(c / v == doctest::Approx(0.9).epsilon(0.03));
}
