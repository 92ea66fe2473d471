#pragma once
#include "portmfg/equilibrium.hpp"
#include "portmfg/inference.hpp"

#include <cstdint>
#include <random>

namespace pmfg {

struct SyntheticSpec {
    enum class Mode { RegressionExact, EquilibriumConsistent };

    std::uint64_t seed = 0;
    int K = 5;
    int N = 1;
    int horizon_days = 1000;
    double noise_sigma = 0.0;  // multiplicative, fraction of each flow
    Mode mode = Mode::RegressionExact;
    double r_lo = 0.8, r_hi = 1.25, r_bar = 1.0;
    double c_lo = 0.1, c_hi = 0.5;
    double v_lo = -1.0, v_hi = 1.0;
    double T_lo = 0.5, T_hi = 1.5;
    double F_lo = 1.0, F_hi = 2.0;
    CrowdednessConfig crowd;
    std::string start_date = "2018-06-01";

    // feature processes of the regression-exact generator (log-AR(1) amplitudes)
    double import_sigma = 0.2;   // common factor of imports Z
    double inflow_sigma = 0.1;   // extra common factor of destination inflows
    double idio_sigma = 0.002;   // port-specific factors
    double margin = 0.5;         // floor on expected flows, in units of max |A|
    double tail_z = 5.0;         // Gaussian quantile covered by the positivity margins

    void validate() const;
    static Mode parse_mode(const std::string& s);
    static std::string mode_name(Mode m);
};

struct Instance {
    PortNetwork network;
    CostParameters params;
    GoodValues values;
};

Instance generate_instance(const SyntheticSpec& spec);

struct Coefficients {
    MatrixXd A;                 // K x K, zero diagonal
    std::vector<MatrixXd> B;    // B[l](i, j)
    MatrixXd C;
    MatrixXd predicted_flow;    // A + B . phi. + C phi_i  (theoretical_coefficients only)
};

// exact right-hand sides of the Step-1 approximations at a given field
Coefficients theoretical_coefficients(const CostParameters& params, const PortNetwork& network,
                                      const GoodValues& values, const MeanField& field, int good = 0);

// coefficients consistent with the Step-2 forward map: A_ij = (v_j - v_i) / (r_j + c g_ij)
Coefficients regression_exact_coefficients(const CostParameters& params, const PortNetwork& network,
                                           const GoodValues& values, int good = 0);

struct SimulationOutput {
    FlowSeries series;
    long truncated = 0;          // negative draws clipped to zero
    long records = 0;
    VectorXd mean_imports;       // regression-exact: zbar
    double inflow_level = 0;     // regression-exact: L
    std::string calibrated_good; // regression-exact: the good carrying the regression
};

// regression-exact mode
SimulationOutput simulate_series(const SyntheticSpec& spec, const Instance& instance, const Coefficients& truth);
// equilibrium-consistent mode
SimulationOutput simulate_series(const SyntheticSpec& spec, const Instance& instance, const EquilibriumResult& eq);

// inflows whose forward proxy reproduces X exactly; throws ProxyInversionFailure on negative inflow
std::vector<double> invert_proxy(const std::vector<double>& X, const CrowdednessConfig& cfg);

// unit-variance AR(1) path with coefficient 0.9 after a burn-in
std::vector<double> ar1_path(int n, std::mt19937_64& rng);

}  // namespace pmfg
