#include "portmfg/commands.hpp"
#include "portmfg/errors.hpp"
#include "portmfg/io.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#ifndef PORTMFG_VERSION
#define PORTMFG_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace pmfg {

std::string good_name(int n) { return "g" + std::to_string(n + 1); }

// ---- config ---------------------------------------------------------------

namespace {

const json& block(const json& doc, const char* key) {
    static const json empty = json::object();
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return empty;
    if (!it->is_object()) throw InvalidInput(std::string("config block '") + key + "' must be an object");
    return *it;
}

template <class T>
T get_or(const json& b, const char* key, T fallback) {
    auto it = b.find(key);
    if (it == b.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw InvalidInput(std::string("config field '") + key + "' has the wrong type");
    }
}

VectorXd vec(const json& j, const char* what) {
    if (!j.is_array()) throw InvalidInput(std::string(what) + " must be an array");
    VectorXd v(j.size());
    for (size_t k = 0; k < j.size(); ++k) {
        if (!j[k].is_number()) throw InvalidInput(std::string(what) + " must hold numbers");
        v(k) = j[k].get<double>();
    }
    return v;
}

MatrixXd mat(const json& j, const char* what) {
    if (!j.is_array() || j.empty()) throw InvalidInput(std::string(what) + " must be a nonempty array of rows");
    const size_t cols = j[0].is_array() ? j[0].size() : 0;
    MatrixXd M(j.size(), cols);
    for (size_t r = 0; r < j.size(); ++r) {
        const VectorXd row = vec(j[r], what);
        if (static_cast<size_t>(row.size()) != cols) throw InvalidInput(std::string(what) + " rows differ in length");
        M.row(r) = row.transpose();
    }
    return M;
}

json to_json(const VectorXd& v) {
    json a = json::array();
    for (int k = 0; k < v.size(); ++k) a.push_back(std::isfinite(v(k)) ? json(v(k)) : json(nullptr));
    return a;
}

json to_json(const MatrixXd& M) {
    json a = json::array();
    for (int r = 0; r < M.rows(); ++r) a.push_back(to_json(VectorXd(M.row(r).transpose())));
    return a;
}

Kernel kernel_from(const json& j) {
    if (j.is_null() || (j.is_string() && j.get<std::string>() == "linear")) return Kernel::linear();
    if (j.is_object()) {
        const std::string type = get_or<std::string>(j, "type", "linear");
        if (type == "linear") return Kernel::linear();
        if (type == "power") return Kernel::power(get_or<double>(j, "p", 1.0));
        if (type == "table") {
            if (!j.contains("values")) throw InvalidInput("table kernel needs 'values'");
            return Kernel::tabulated(mat(j["values"], "kernel.values"));
        }
    }
    throw InvalidInput("kernel must be \"linear\", {\"type\":\"power\",\"p\":..} or {\"type\":\"table\",\"values\":..}");
}

}  // namespace

RunConfig config_from_json(json doc, bool apply_env) {
    if (!doc.is_object()) throw InvalidInput("config document must be a JSON object");
    RunConfig cfg;
    if (apply_env) {
        const std::pair<const char*, const char*> env[] = {
            {"PORTMFG_FLOWS", "flows"}, {"PORTMFG_DISTANCES", "distances"}, {"PORTMFG_OUTPUT", "output"}};
        for (auto [var, key] : env)
            if (const char* v = std::getenv(var)) {
                doc["paths"][key] = v;
                cfg.overrides.push_back(var);
            }
        if (const char* v = std::getenv("PORTMFG_SEED")) {
            char* end = nullptr;
            const unsigned long long s = std::strtoull(v, &end, 10);
            if (!*v || *end) throw InvalidInput("PORTMFG_SEED must be a nonnegative integer");
            doc["seed"] = s;
            cfg.overrides.push_back("PORTMFG_SEED");
        }
    }
    cfg.seed = get_or<std::uint64_t>(doc, "seed", 0);
    const json& paths = block(doc, "paths");
    cfg.flows = get_or<std::string>(paths, "flows", "");
    cfg.distances = get_or<std::string>(paths, "distances", "");
    cfg.output = get_or<std::string>(paths, "output", "out");
    for (const auto* p : {&cfg.flows, &cfg.distances})
        if (!p->empty() && !fs::exists(*p)) throw InvalidInput("referenced file does not exist: " + *p);
    const int exponent = get_or<int>(block(doc, "model"), "exponent", 2);
    if (exponent != 2) throw InvalidInput("only the quadratic case (exponent 2) is supported");
    cfg.doc = std::move(doc);
    return cfg;
}

RunConfig load_config(const std::string& path, bool apply_env) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw InvalidInput("config " + path + " is not valid JSON: " + e.what());
    }
    RunConfig cfg = config_from_json(std::move(doc), apply_env);
    cfg.source = path;
    return cfg;
}

ModelSetup model_from_config(const RunConfig& cfg, bool need_model) {
    ModelSetup m;
    const json& net = block(cfg.doc, "network");
    std::vector<std::string> labels = get_or<std::vector<std::string>>(net, "labels", {});
    MatrixXd T;
    if (!cfg.distances.empty()) {
        DistanceLoad d = load_distances(cfg.distances, labels);
        labels = d.labels;
        T = d.matrix;
        m.warnings = d.warnings;
    } else if (net.contains("travel_cost")) {
        T = mat(net["travel_cost"], "network.travel_cost");
    } else {
        throw InvalidInput("need network.travel_cost or paths.distances");
    }
    if (labels.empty())
        for (int k = 0; k < T.rows(); ++k) labels.push_back("P" + std::to_string(k + 1));
    m.network = PortNetwork(labels, T, kernel_from(net.contains("kernel") ? net["kernel"] : json()));
    if (!need_model) return m;

    const json& model = block(cfg.doc, "model");
    for (const char* key : {"congestion", "transport", "capacities", "values"})
        if (!model.contains(key)) throw InvalidInput(std::string("model.") + key + " is required");
    m.params.congestion = vec(model["congestion"], "model.congestion");
    m.params.transport = vec(model["transport"], "model.transport");
    m.params.capacities = vec(model["capacities"], "model.capacities");
    m.values.values = mat(model["values"], "model.values");
    m.params.validate(m.network.size());
    if (m.values.values.rows() != m.params.goods() || m.values.values.cols() != m.network.size())
        throw InvalidInput("model.values must be N x K");
    return m;
}

FixedPointOptions solver_options(const RunConfig& cfg) {
    const json& s = block(cfg.doc, "solver");
    FixedPointOptions o;
    o.damping = get_or<double>(s, "damping", o.damping);
    o.tol = get_or<double>(s, "tol", o.tol);
    o.max_iter = get_or<long>(s, "max_iter", o.max_iter);
    o.adaptive = get_or<bool>(s, "adaptive_damping", o.adaptive);
    if (!(o.tol > 0) || o.max_iter < 1) throw InvalidInput("solver tolerances must be positive");
    if (!(o.damping > 0 && o.damping <= 1)) throw InvalidInput("damping must lie in (0, 1]");
    return o;
}

InferenceConfig inference_config(const RunConfig& cfg) {
    const json& b = block(cfg.doc, "inference");
    InferenceConfig ic;
    ic.good = get_or<std::string>(b, "good", "");
    ic.crowd.shift_days = get_or<int>(b, "shift_days", 60);
    ic.crowd.window_days = get_or<int>(b, "window_days", 20);
    ic.ridge = get_or<double>(b, "ridge", 0.0);
    ic.cond_cap = get_or<double>(b, "cond_cap", 1e10);
    ic.calib.r_bar = get_or<double>(b, "r_bar", 1.0);
    ic.calib.r_min = get_or<double>(b, "r_min", 0.1);
    ic.calib.starts = get_or<int>(b, "multi_starts", 16);
    ic.calib.seed = cfg.seed;
    const std::string from = get_or<std::string>(b, "date_from", ""), to = get_or<std::string>(b, "date_to", "");
    if (!from.empty()) ic.date_from = parse_iso_date(from);
    if (!to.empty()) ic.date_to = parse_iso_date(to);
    if (ic.date_from && ic.date_to && *ic.date_from > *ic.date_to) throw InvalidInput("date window is not ordered");
    if (!(ic.cond_cap > 0)) throw InvalidInput("cond_cap must be positive");
    ic.crowd.validate();
    return ic;
}

SyntheticSpec synthetic_spec(const RunConfig& cfg) {
    const json& b = block(cfg.doc, "synthetic");
    SyntheticSpec s;
    s.seed = cfg.seed;
    s.K = get_or<int>(b, "K", s.K);
    s.N = get_or<int>(b, "N", s.N);
    s.horizon_days = get_or<int>(b, "horizon_days", s.horizon_days);
    s.noise_sigma = get_or<double>(b, "noise_sigma", s.noise_sigma);
    s.mode = SyntheticSpec::parse_mode(get_or<std::string>(b, "mode", "regression_exact"));
    s.r_bar = get_or<double>(b, "r_bar", s.r_bar);
    s.crowd.shift_days = get_or<int>(b, "shift_days", s.crowd.shift_days);
    s.crowd.window_days = get_or<int>(b, "window_days", s.crowd.window_days);
    s.start_date = get_or<std::string>(b, "start_date", s.start_date);
    s.import_sigma = get_or<double>(b, "import_sigma", s.import_sigma);
    s.inflow_sigma = get_or<double>(b, "inflow_sigma", s.inflow_sigma);
    s.idio_sigma = get_or<double>(b, "idio_sigma", s.idio_sigma);
    const json& ranges = block(b, "ranges");
    auto range = [&](const char* key, double& lo, double& hi) {
        if (!ranges.contains(key)) return;
        const VectorXd v = vec(ranges[key], key);
        if (v.size() != 2) throw InvalidInput(std::string("range ") + key + " needs [lo, hi]");
        lo = v(0);
        hi = v(1);
    };
    range("r", s.r_lo, s.r_hi);
    range("c", s.c_lo, s.c_hi);
    range("v", s.v_lo, s.v_hi);
    range("T", s.T_lo, s.T_hi);
    range("F", s.F_lo, s.F_hi);
    s.validate();
    return s;
}

// ---- run context ------------------------------------------------------------

namespace {

struct Run {
    std::string command;
    fs::path out;
    RunConfig cfg;
    json inputs = json::object();
    json outputs = json::object();

    void write(const std::string& name, const std::string& content) {
        atomic_write((out / name).string(), content);
        outputs[name] = sha256_hex(content);
    }
    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
    void input(const std::string& path) {
        if (!path.empty() && fs::exists(path) && fs::is_regular_file(path)) inputs[path] = file_sha256(path);
    }
    void manifest(const std::string& status) {
        json m;
        m["command"] = command;
        m["status"] = status;
        m["config_hash"] = sha256_hex(cfg.doc.dump());
        m["config"] = cfg.doc;
        m["seed"] = cfg.seed;
        m["environment_overrides"] = cfg.overrides;
        m["versions"] = {{"portmfg", PORTMFG_VERSION},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                       std::to_string(EIGEN_MINOR_VERSION)},
                         {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                         {"compiler", __VERSION__}};
        m["inputs"] = inputs;
        m["outputs"] = outputs;
        atomic_write((out / "manifest.json").string(), m.dump(2) + "\n");
    }
};

std::string field_csv(const MeanField& f, const std::vector<std::string>& labels) {
    std::string s = "good,port,phi\n";
    for (int n = 0; n < f.occupancy.rows(); ++n)
        for (int i = 0; i < f.occupancy.cols(); ++i)
            s += good_name(n) + "," + labels[i] + "," + format_double(f.occupancy(n, i)) + "\n";
    return s;
}

std::string policy_csv(const ControlPolicy& p, const std::vector<std::string>& labels) {
    std::string s = "good,origin,destination,q\n";
    for (size_t n = 0; n < p.transitions.size(); ++n)
        for (int i = 0; i < p.transitions[n].rows(); ++i)
            for (int j = 0; j < p.transitions[n].cols(); ++j)
                s += good_name(static_cast<int>(n)) + "," + labels[i] + "," + labels[j] + "," +
                     format_double(p.transitions[n](i, j)) + "\n";
    return s;
}

// rows of a CSV with a header; returns the header through `head`
std::vector<std::vector<std::string>> read_table(const std::string& path, std::vector<std::string>& head) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header in " + path, 1);
    head = split_csv_line(line);
    std::vector<std::vector<std::string>> rows;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != head.size()) throw ParseError(path + ": field count differs from header", lineno);
        rows.push_back(std::move(f));
    }
    return rows;
}

double number(const std::string& s) {
    if (s.empty() || s == "nan") return std::numeric_limits<double>::quiet_NaN();
    size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw InvalidInput("not a number: " + s);
    return x;
}

int good_index(const std::string& g, int N) {
    if (g.size() < 2 || g[0] != 'g') throw InvalidInput("unknown good '" + g + "'");
    const int n = std::stoi(g.substr(1)) - 1;
    if (n < 0 || n >= N) throw InvalidInput("good '" + g + "' out of range");
    return n;
}

int port_index(const PortNetwork& net, const std::string& p) {
    const int i = net.index_of(p);
    if (i < 0) throw LabelMismatch("port '" + p + "' is not in the network");
    return i;
}

json verdict_json(const ExistenceVerdict& v) {
    return {{"verdict", v.verdict()},
            {"determinant", v.determinant},
            {"transposed_determinant", v.transposed_determinant},
            {"scale", v.scale},
            {"threshold", v.threshold},
            {"condition_estimate", std::isfinite(v.condition_estimate) ? json(v.condition_estimate) : json("inf")},
            {"numerical_corank", v.numerical_corank},
            {"mass_constrained_unique", v.mass_constrained_unique},
            {"bordered_condition", std::isfinite(v.bordered_condition) ? json(v.bordered_condition) : json("inf")}};
}

// ---- subcommands ------------------------------------------------------------

int cmd_solve(Run& run, std::ostream& log) {
    const ModelSetup m = model_from_config(run.cfg);
    const FixedPointOptions opt = solver_options(run.cfg);
    const EquilibriumResult res = fixed_point(m.params, m.network, m.values, std::nullopt, opt);
    json out = {{"converged", res.converged},
                {"iterations", res.iterations},
                {"stationarity_residual", res.stationarity_residual},
                {"optimality_residual", res.optimality_residual},
                {"final_damping", res.final_damping},
                {"max_row_sum_residual", res.policy.max_row_sum_residual()},
                {"has_negative", res.policy.has_negative},
                {"negative_entries", res.policy.negative_entries()},
                {"warnings", m.warnings}};
    if (m.params.goods() == 1) {
        const OmegaSystem sys = build_omega(m.params, m.network, m.values, 0);
        const json& s = block(run.cfg.doc, "solver");
        const ExistenceVerdict v =
            existence_check(sys, get_or<double>(s, "tol_det", 1e-10), get_or<double>(s, "cond_cap", 1e12));
        json rep = verdict_json(v);
        try {
            const RepresentativeSolution rs = representative_solve(sys, m.params.capacities(0),
                                                                   get_or<double>(s, "tol_det", 1e-10),
                                                                   get_or<double>(s, "cond_cap", 1e12));
            const VectorXd fp = res.field.occupancy.row(0).transpose();
            rep["path"] = rs.path;
            rep["phi"] = to_json(rs.phi);
            rep["pre_rescale_mass"] = rs.pre_rescale_mass;
            rep["residual"] = rs.residual;
            rep["max_rel_diff_vs_fixed_point"] = (rs.phi - fp).cwiseAbs().maxCoeff() / fp.cwiseAbs().maxCoeff();
        } catch (const DegenerateSystem& e) {
            rep["error"] = e.what();
        }
        out["representative"] = rep;
    }
    run.write("field.csv", field_csv(res.field, m.network.labels));
    run.write("policy.csv", policy_csv(res.policy, m.network.labels));
    run.write_json("solve.json", out);
    log << (res.converged ? "converged" : "NOT converged") << " after " << res.iterations
        << " iterations, stationarity residual " << res.stationarity_residual << "\n";
    return res.converged ? 0 : 2;
}

int cmd_check(Run& run, std::ostream& log) {
    const ModelSetup m = model_from_config(run.cfg);
    const json& s = block(run.cfg.doc, "solver");
    const int good = get_or<int>(s, "good", 0);
    if (good < 0 || good >= m.params.goods()) throw InvalidInput("solver.good out of range");
    const OmegaSystem sys = build_omega(m.params, m.network, m.values, good);
    const ExistenceVerdict v =
        existence_check(sys, get_or<double>(s, "tol_det", 1e-10), get_or<double>(s, "cond_cap", 1e12));
    json out = verdict_json(v);
    out["good"] = good_name(good);
    out["R"] = to_json(sys.R);
    out["m"] = to_json(sys.m);
    out["Mbar"] = to_json(sys.Mbar);
    out["C"] = to_json(sys.C);
    out["warnings"] = m.warnings;
    run.write("omega.csv", format_matrix(m.network.labels, sys.Omega));
    run.write_json("check.json", out);
    log << "verdict " << v.verdict() << " (det " << v.determinant << ", threshold " << v.threshold << "); with total mass fixed: "
        << (v.mass_constrained_unique ? "unique" : "degenerate") << "\n";
    return 0;
}

int cmd_infer(Run& run, std::ostream& log) {
    if (run.cfg.flows.empty()) throw InvalidInput("paths.flows is required for infer");
    const ModelSetup m = model_from_config(run.cfg, false);
    const InferenceConfig ic = inference_config(run.cfg);
    const FlowLoad fl = load_flows(run.cfg.flows);
    const InferenceReport rep = infer_pipeline(fl.series, m.network, ic);
    const int K = m.network.size();
    const auto& L = m.network.labels;

    std::string csv = "origin,destination,status,n_obs,A";
    for (const auto& l : L) csv += ",B_" + l;
    csv += ",C,r_squared,residual_variance,condition_number,se_A";
    for (const auto& l : L) csv += ",se_B_" + l;
    csv += ",se_C\n";
    json failures = json::array();
    for (const auto& f : rep.routes) {
        csv += L[f.origin] + "," + L[f.destination] + "," + (f.ok ? "ok" : f.error_code);
        if (!f.ok) {
            csv += ",0";
            for (int k = 0; k < 2 * K + 7; ++k) csv += ",nan";
            csv += "\n";
            failures.push_back({{"origin", L[f.origin]}, {"destination", L[f.destination]}, {"code", f.error_code},
                                {"message", f.error}});
            continue;
        }
        const auto& c = f.coef;
        csv += "," + std::to_string(c.n_obs) + "," + format_double(c.intercept);
        for (int l = 0; l < K; ++l) csv += "," + format_double(c.crowd_slopes(l));
        csv += "," + format_double(c.self_slope) + "," + format_double(c.r_squared) + "," +
               format_double(c.residual_variance) + "," + format_double(c.condition_number);
        for (int k = 0; k < c.standard_errors.size(); ++k) csv += "," + format_double(c.standard_errors(k));
        csv += "\n";
    }
    const CalibrationResult& cr = rep.calibration;
    json excluded = json::array();
    for (const auto& e : cr.excluded_routes) excluded.push_back({L[e[0]], L[e[1]]});
    json cal = {{"labels", L},
                {"good", rep.good},
                {"transport_cost", cr.transport_cost},
                {"congestion", to_json(cr.congestion)},
                {"values", to_json(cr.values)},
                {"objective", cr.objective},
                {"route_residuals", to_json(cr.residuals)},
                {"gauge", {{"sum_v", cr.sum_v}, {"sum_r", cr.sum_r}, {"r_bar", cr.r_bar}, {"r_min", cr.r_min}}},
                {"solver_status",
                 {{"starts", cr.starts},
                  {"starts_converged", cr.starts_converged},
                  {"best_start", cr.best_start},
                  {"start_spread", cr.start_spread},
                  {"min_curvature", cr.min_curvature},
                  {"max_curvature", cr.max_curvature},
                  {"flat_direction", cr.flat_direction}}},
                {"excluded_routes", excluded},
                {"intercepts", to_json(rep.A)},
                {"usable_routes", rep.usable_routes},
                {"route_failures", failures},
                {"b_theory_max_abs_diff", rep.b_theory_max_abs_diff},
                {"flow_rows", fl.rows},
                {"merged_duplicates", fl.merged_duplicates},
                {"date_range", {format_iso_date(fl.series.first_day()), format_iso_date(fl.series.last_day())}},
                {"warnings", m.warnings}};
    run.write("coefficients.csv", csv);
    run.write_json("calibration.json", cal);
    log << "calibrated c = " << cr.transport_cost << " from " << rep.usable_routes << " routes, objective "
        << cr.objective << "\n";
    return 0;
}

int cmd_simulate(Run& run, std::ostream& log) {
    const SyntheticSpec spec = synthetic_spec(run.cfg);
    const Instance inst = generate_instance(spec);
    const auto& L = inst.network.labels;
    json truth = {{"mode", SyntheticSpec::mode_name(spec.mode)},
                  {"seed", spec.seed},
                  {"labels", L},
                  {"congestion", to_json(inst.params.congestion)},
                  {"transport", to_json(inst.params.transport)},
                  {"capacities", to_json(inst.params.capacities)},
                  {"values", to_json(inst.values.values)},
                  {"travel_cost", to_json(inst.network.travel_cost)},
                  {"noise_sigma", spec.noise_sigma},
                  {"horizon_days", spec.horizon_days},
                  {"start_date", spec.start_date}};
    SimulationOutput sim;
    if (spec.mode == SyntheticSpec::Mode::RegressionExact) {
        const Coefficients co = regression_exact_coefficients(inst.params, inst.network, inst.values, 0);
        sim = simulate_series(spec, inst, co);
        json B = json::array();
        for (const auto& b : co.B) B.push_back(to_json(b));
        truth["calibrated_good"] = sim.calibrated_good;
        truth["A"] = to_json(co.A);
        truth["B"] = B;
        truth["C"] = to_json(co.C);
        truth["mean_imports"] = to_json(sim.mean_imports);
        truth["inflow_level"] = sim.inflow_level;
    } else {
        const EquilibriumResult eq = fixed_point(inst.params, inst.network, inst.values, std::nullopt,
                                                 solver_options(run.cfg));
        if (!eq.converged) throw SolverFailure("equilibrium did not converge; cannot simulate around it");
        sim = simulate_series(spec, inst, eq);
        truth["phi"] = to_json(eq.field.occupancy);
        json Q = json::array();
        for (const auto& q : eq.policy.transitions) Q.push_back(to_json(q));
        truth["Q"] = Q;
    }
    truth["truncated"] = sim.truncated;
    truth["records"] = sim.records;
    run.write("flows.csv", format_flows(sim.series));
    run.write("distances.csv", format_matrix(L, inst.network.travel_cost));
    run.write_json("truth.json", truth);
    log << "wrote " << sim.records << " flow records (" << sim.truncated << " truncated)\n";
    return 0;
}

int cmd_validate(Run& run, std::ostream& log) {
    if (run.out.empty()) throw InvalidInput("validate needs an input directory");
    const ModelSetup m = model_from_config(run.cfg);
    const fs::path in = run.cfg.doc.value("__input", std::string());
    const int N = m.params.goods(), K = m.network.size();
    EquilibriumResult res;
    res.field.occupancy = MatrixXd::Constant(N, K, std::numeric_limits<double>::quiet_NaN());
    res.policy.transitions.assign(N, MatrixXd::Constant(K, K, std::numeric_limits<double>::quiet_NaN()));
    std::vector<std::string> head;
    const std::string fpath = (in / "field.csv").string(), ppath = (in / "policy.csv").string();
    run.input(fpath);
    run.input(ppath);
    for (const auto& r : read_table(fpath, head))
        res.field.occupancy(good_index(r[0], N), port_index(m.network, r[1])) = number(r[2]);
    for (const auto& r : read_table(ppath, head))
        res.policy.transitions[good_index(r[0], N)](port_index(m.network, r[1]), port_index(m.network, r[2])) =
            number(r[3]);
    if (!res.field.occupancy.allFinite()) throw InvalidInput("field.csv does not cover every (good, port)");
    for (const auto& q : res.policy.transitions)
        if (!q.allFinite()) throw InvalidInput("policy.csv does not cover every (good, origin, destination)");
    res.policy.refresh_diagnostics();
    const FixedPointOptions opt = solver_options(run.cfg);
    const double h = get_or<double>(block(run.cfg.doc, "solver"), "fd_step", 1e-6);
    const VerificationReport rep = verify_equilibrium(res, m.params, m.network, m.values, h, opt.tol);
    run.write_json("validation.json", {{"pass", rep.pass},
                                       {"row_sum_deviation", rep.row_sum_deviation},
                                       {"stationarity_residual", rep.stationarity},
                                       {"projected_gradient", rep.projected_gradient},
                                       {"fd_projected_gradient", rep.fd_projected_gradient},
                                       {"fd_disagreement", rep.fd_disagreement},
                                       {"tol", rep.tol},
                                       {"fd_step", h}});
    log << (rep.pass ? "PASS" : "FAIL") << ": row sums " << rep.row_sum_deviation << ", stationarity "
        << rep.stationarity << ", projected gradient " << rep.projected_gradient << "\n";
    return 0;
}

int cmd_report(Run& run, std::ostream& log, const fs::path& in) {
    int tables = 0;
    std::vector<std::string> head;
    if (fs::exists(in / "coefficients.csv")) {
        run.input((in / "coefficients.csv").string());
        const auto rows = read_table((in / "coefficients.csv").string(), head);
        std::vector<std::string> ports;
        for (size_t k = 5; k < head.size() && head[k].rfind("B_", 0) == 0; ++k) ports.push_back(head[k].substr(2));
        std::string a = "origin,destination,A\n", b = "origin,destination,crowd_port,B\n";
        for (const auto& r : rows) {
            a += r[0] + "," + r[1] + "," + r[4] + "\n";
            for (size_t l = 0; l < ports.size(); ++l) b += r[0] + "," + r[1] + "," + ports[l] + "," + r[5 + l] + "\n";
        }
        run.write("report_A.csv", a);
        run.write("report_B.csv", b);
        tables += 2;
    }
    if (fs::exists(in / "field.csv")) {
        run.input((in / "field.csv").string());
        const auto rows = read_table((in / "field.csv").string(), head);
        std::string s = "good,port,phi\n";
        for (const auto& r : rows) s += r[0] + "," + r[1] + "," + r[2] + "\n";
        run.write("report_phi.csv", s);
        ++tables;
    }
    if (fs::exists(in / "calibration.json")) {
        run.input((in / "calibration.json").string());
        const json cal = json::parse(read_file((in / "calibration.json").string()));
        json truth;
        if (fs::exists(in / "truth.json")) truth = json::parse(read_file((in / "truth.json").string()));
        std::string s = "port,r,v\n";
        const auto labels = cal.at("labels");
        for (size_t k = 0; k < labels.size(); ++k)
            s += labels[k].get<std::string>() + "," + cal["congestion"][k].dump() + "," + cal["values"][k].dump() + "\n";
        run.write("report_r.csv", s);
        ++tables;
    }
    if (fs::exists(in / "truth.json")) {
        run.input((in / "truth.json").string());
        const json truth = json::parse(read_file((in / "truth.json").string()));
        std::string s = "port,r_true,v_true\n";
        const auto labels = truth.at("labels");
        for (size_t k = 0; k < labels.size(); ++k)
            s += labels[k].get<std::string>() + "," + truth["congestion"][k].dump() + "," +
                 truth["values"][0][k].dump() + "\n";
        run.write("report_truth.csv", s);
        ++tables;
    }
    if (tables == 0) throw InvalidInput("no saved results found in " + in.string());
    log << "wrote " << tables << " report tables\n";
    return 0;
}

}  // namespace

int run_command(const CommandArgs& args, std::ostream& log) {
    Run run;
    run.command = args.command;
    auto fail = [&](const std::string& code, const std::string& msg, int status, long line = -1) {
        json rec = {{"status", "error"}, {"command", args.command}, {"code", code}, {"message", msg},
                    {"exit_status", status}, {"partial_outputs", run.outputs}};
        if (line >= 0) rec["line"] = line;
        log << rec.dump() << "\n";
        if (!run.out.empty()) {
            try {
                atomic_write((run.out / "error.json").string(), rec.dump(2) + "\n");
                run.manifest("error");
            } catch (...) {
            }
        }
        return status;
    };
    try {
        static const char* known[] = {"solve", "check", "infer", "simulate", "validate", "report"};
        if (std::find(std::begin(known), std::end(known), args.command) == std::end(known))
            throw InvalidInput("unknown command '" + args.command + "'");
        if (args.command == "report") {
            if (args.input.empty()) throw InvalidInput("report needs --input");
            run.cfg.doc = json::object();
            run.out = args.out.empty() ? fs::path(args.input) / "report" : fs::path(args.out);
            if (!fs::is_directory(args.input)) throw InvalidInput("input directory does not exist: " + args.input);
            const int rc = cmd_report(run, log, args.input);
            run.manifest("ok");
            return rc;
        }
        if (args.config.empty()) throw InvalidInput("--config is required");
        run.cfg = load_config(args.config);
        run.out = args.out.empty() ? fs::path(run.cfg.output) : fs::path(args.out);
        run.input(args.config);
        run.input(run.cfg.flows);
        run.input(run.cfg.distances);
        int rc = 0;
        if (args.command == "solve") rc = cmd_solve(run, log);
        else if (args.command == "check") rc = cmd_check(run, log);
        else if (args.command == "infer") rc = cmd_infer(run, log);
        else if (args.command == "simulate") rc = cmd_simulate(run, log);
        else {
            if (args.input.empty()) throw InvalidInput("validate needs --input (a solve output directory)");
            run.cfg.doc["__input"] = args.input;
            rc = cmd_validate(run, log);
            run.cfg.doc.erase("__input");
        }
        run.manifest(rc == 0 ? "ok" : "not_converged");
        return rc;
    } catch (const LineError& e) {
        return fail(e.code(), e.what(), e.exit_status(), e.line);
    } catch (const Error& e) {
        return fail(e.code(), e.what(), e.exit_status());
    } catch (const fs::filesystem_error& e) {
        return fail("IOError", e.what(), 1);
    } catch (const json::exception& e) {
        return fail("ParseError", e.what(), 1);
    } catch (const std::invalid_argument& e) {
        return fail("ParseError", e.what(), 1);
    } catch (const std::out_of_range& e) {
        return fail("ParseError", e.what(), 1);
    }
}

}  // namespace pmfg
