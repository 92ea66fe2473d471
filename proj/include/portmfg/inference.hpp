#pragma once
#include "portmfg/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pmfg {

// days since 1970-01-01
using Day = std::int32_t;
Day parse_iso_date(const std::string& s);  // throws InvalidInput
std::string format_iso_date(Day d);

struct FlowRecord {
    Day date;
    std::string origin, destination, good;
    double tons;
};

struct FlowSeries {
    std::vector<FlowRecord> records;

    bool empty() const { return records.empty(); }
    Day first_day() const;
    Day last_day() const;
    std::vector<std::string> goods() const;  // sorted, distinct
    // keep records with from <= date <= to
    FlowSeries window(std::optional<Day> from, std::optional<Day> to) const;
};

// daily tensor over [first, first + days)
struct DenseFlows {
    Day first = 0;
    int days = 0;
    int K = 0;
    std::vector<std::string> goods;
    std::vector<double> data;  // (good, day, origin, destination)

    static DenseFlows build(const FlowSeries& series, const std::vector<std::string>& labels);
    double at(int g, int t, int i, int j) const { return data[((static_cast<size_t>(g) * days + t) * K + i) * K + j]; }
    double& at(int g, int t, int i, int j) { return data[((static_cast<size_t>(g) * days + t) * K + i) * K + j]; }
    int good_index(const std::string& g) const;  // -1 if absent
    // all goods, all origins (self included)
    std::vector<double> total_inflow(int j) const;
};

struct CrowdednessConfig {
    int shift_days = 60;
    int window_days = 20;
    void validate() const;
};

// (1/m) sum_{tau=1..m} inflow[t + s + tau]; length inflow.size() - s - m
std::vector<double> crowdedness_proxy(const std::vector<double>& inflow, const CrowdednessConfig& cfg);
std::vector<double> crowdedness_proxy(const DenseFlows& flows, const CrowdednessConfig& cfg, int destination);

struct RegressionDataset {
    int origin = 0, destination = 0;
    VectorXd Y;   // exports origin -> destination
    MatrixXd X;   // crowdedness proxy of every destination
    VectorXd Z;   // imports into origin
    Day first_day = 0;
    int n_obs() const { return static_cast<int>(Y.size()); }
};

RegressionDataset build_regression_dataset(const DenseFlows& flows, const CrowdednessConfig& cfg, int origin,
                                           int destination, int good);

struct RegressionCoefficients {
    int origin = 0, destination = 0;
    double intercept = 0;
    VectorXd crowd_slopes;
    double self_slope = 0;
    int n_obs = 0;
    double r_squared = 0;
    double residual_variance = 0;
    VectorXd standard_errors;  // intercept, slopes, self slope
    double ridge = 0;
    double condition_number = 0;
    VectorXd residuals;
};

RegressionCoefficients ols_fit(const RegressionDataset& data, double ridge = 0.0, double cond_cap = 1e10);

struct CalibrationConfig {
    double r_bar = 1.0;
    double r_min = 0.1;
    int starts = 16;
    std::uint64_t seed = 0;
    int max_active_set_iter = 500;
};

struct CalibrationResult {
    double transport_cost = 0;
    VectorXd congestion;
    VectorXd values;
    double objective = 0;
    MatrixXd residuals;  // NaN on excluded routes and the diagonal
    // gauge actually imposed
    double r_bar = 1, r_min = 0.1, sum_v = 0, sum_r = 0;
    // solver status
    int starts = 0, starts_converged = 0, best_start = -1;
    double start_spread = 0;        // max relative parameter spread across converged starts
    double min_curvature = 0;       // smallest eigenvalue of the reduced Gauss-Newton matrix
    double max_curvature = 0;
    bool flat_direction = false;
    std::vector<std::array<int, 2>> excluded_routes;
};

// A(i, j) for i != j; NaN marks a missing route
CalibrationResult calibrate(const MatrixXd& A, const PortNetwork& network, const CalibrationConfig& cfg = {});

// A_ij (r_j + c g_ij) - (v_j - v_i) summed in squares over usable routes
double calibration_objective(const MatrixXd& A, const MatrixXd& G, double c, const VectorXd& r, const VectorXd& v);

struct InferenceConfig {
    CrowdednessConfig crowd;
    CalibrationConfig calib;
    std::string good;  // empty: first good in sorted order
    double ridge = 0;
    double cond_cap = 1e10;
    std::optional<Day> date_from, date_to;
};

struct RouteFit {
    int origin, destination;
    bool ok = false;
    std::string error_code, error;
    RegressionCoefficients coef;
};

struct InferenceReport {
    std::string good;
    std::vector<RouteFit> routes;
    MatrixXd A;                 // NaN where the fit failed
    CalibrationResult calibration;
    // estimated B against w(wn - 1{l=j}) r at the calibrated parameters
    double b_theory_max_abs_diff = 0;
    int usable_routes = 0;
};

InferenceReport infer_pipeline(const FlowSeries& series, const PortNetwork& network, const InferenceConfig& cfg);

}  // namespace pmfg
