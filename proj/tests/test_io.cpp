#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "portmfg/commands.hpp"
#include "portmfg/errors.hpp"
#include "portmfg/io.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace pmfg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("portmfg_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name, const std::string& content) const {
        std::ofstream(path / name) << content;
        return (path / name).string();
    }
};

FlowLoad flows_from(const std::string& text) {
    std::istringstream in(text);
    return parse_flows(in);
}

template <class E>
long thrown_line(const std::string& text) {
    try {
        flows_from(text);
    } catch (const E& e) {
        return e.line;
    }
    return -1;
}

}  // namespace

TEST_CASE("flows: header only") {
    const FlowLoad f = flows_from("date,origin,destination,good,tons\n");
    CHECK(f.series.empty());
    CHECK(f.rows == 0);
    CHECK_FALSE(f.has_range());
}

TEST_CASE("flows: duplicates are summed") {
    const FlowLoad f = flows_from("date,origin,destination,good,tons\n2020-01-02,A,B,oil,5\n2020-01-02,A,B,oil,5\n");
    REQUIRE(f.series.records.size() == 1);
    CHECK(f.series.records[0].tons == 10);
    CHECK(f.rows == 2);
    CHECK(f.merged_duplicates == 1);
}

TEST_CASE("flows: errors carry line numbers") {
    CHECK(thrown_line<ParseError>("date,from,to,good,tons\n") == 1);
    CHECK(thrown_line<ParseError>("date,origin,destination,good,tons\n2020-01-02,A,B,oil,5\n2020-13-02,A,B,oil,5\n") == 3);
    CHECK(thrown_line<ParseError>("date,origin,destination,good,tons\n2020-01-02,A,B,oil,five\n") == 2);
    CHECK(thrown_line<ParseError>("date,origin,destination,good,tons\n2020-01-02,A,B,5\n") == 2);
    CHECK(thrown_line<NegativeQuantity>("date,origin,destination,good,tons\n\n2020-01-02,A,B,oil,-1\n") == 3);
}

TEST_CASE("flows: write and read back") {
    TempDir d;
    FlowSeries s;
    s.records.push_back({parse_iso_date("2019-03-04"), "P1", "P2", "g1", 0.1 + 0.2});
    s.records.push_back({parse_iso_date("2019-03-05"), "P2", "P1", "g1", 1e-300});
    s.records.push_back({parse_iso_date("2019-03-05"), "P2", "P1", "g2", 123456789.123456789});
    const std::string path = (d.path / "sub" / "f.csv").string();
    write_flows(path, s);
    const FlowLoad back = load_flows(path);
    REQUIRE(back.series.records.size() == 3);
    for (size_t k = 0; k < 3; ++k) CHECK(back.series.records[k].tons == s.records[k].tons);
    CHECK(format_iso_date(back.series.first_day()) == "2019-03-04");
    CHECK(format_iso_date(back.series.last_day()) == "2019-03-05");
    for (const auto& e : fs::directory_iterator(d.path / "sub")) CHECK(e.path().filename() == "f.csv");
}

TEST_CASE("distances: parse, reorder and diagnose") {
    std::istringstream ok("port,A,B\nA,0,2\nB,2,0\n");
    const DistanceLoad a = parse_distances(ok, {"A", "B"});
    CHECK(a.matrix(0, 1) == 2);
    CHECK(a.warnings.empty());

    std::istringstream reordered("port,B,A\nA,3,0\nB,0,4\n");
    const DistanceLoad r = parse_distances(reordered, {"A", "B"});
    CHECK(r.matrix(0, 1) == 3);
    CHECK(r.matrix(1, 0) == 4);
    CHECK(r.asymmetric_pairs == 1);
    CHECK(r.warnings.size() == 1);

    std::istringstream diag("port,A,B\nA,1,2\nB,2,0\n");
    const DistanceLoad g = parse_distances(diag);
    CHECK(g.diagonal_coerced == 1);
    CHECK(g.matrix(0, 0) == 0);

    std::istringstream missing("port,A,B\nA,0,2\nB,2,0\n");
    try {
        parse_distances(missing, {"A", "C"});
        FAIL("expected LabelMismatch");
    } catch (const LabelMismatch& e) {
        CHECK(std::string(e.what()).find("missing:C") != std::string::npos);
        CHECK(std::string(e.what()).find("extra:B") != std::string::npos);
    }
    std::istringstream ragged("port,A,B\nA,0\n");
    CHECK_THROWS_AS(parse_distances(ragged), ParseError);
}

TEST_CASE("numbers print in round-trip form") {
    for (double x : {0.1, 1.0 / 3, 1e-300, 6.02214076e23, -0.0, 2.5})
        CHECK(std::stod(format_double(x)) == x);
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("config: environment overrides paths and seed only") {
    TempDir d;
    const std::string flows = d.file("f.csv", "date,origin,destination,good,tons\n");
    ::setenv("PORTMFG_FLOWS", flows.c_str(), 1);
    ::setenv("PORTMFG_SEED", "99", 1);
    const RunConfig c = config_from_json(json{{"seed", 1}, {"paths", {{"output", "x"}}}});
    CHECK(c.flows == flows);
    CHECK(c.seed == 99);
    CHECK(c.overrides.size() == 2);
    const RunConfig raw = config_from_json(json{{"seed", 1}}, false);
    CHECK(raw.seed == 1);
    ::setenv("PORTMFG_SEED", "nope", 1);
    CHECK_THROWS_AS(config_from_json(json::object()), InvalidInput);
    ::unsetenv("PORTMFG_FLOWS");
    ::unsetenv("PORTMFG_SEED");
}

TEST_CASE("config: validation") {
    CHECK_THROWS_AS(config_from_json(json::array()), InvalidInput);
    CHECK_THROWS_AS(config_from_json(json{{"model", {{"exponent", 3}}}}), InvalidInput);
    CHECK_THROWS_AS(config_from_json(json{{"paths", {{"flows", "/no/such/file.csv"}}}}), InvalidInput);
    CHECK_THROWS_AS(solver_options(config_from_json(json{{"solver", {{"tol", -1.0}}}})), InvalidInput);
    CHECK_THROWS_AS(solver_options(config_from_json(json{{"solver", {{"damping", "half"}}}})), InvalidInput);
    CHECK_THROWS_AS(inference_config(config_from_json(json{{"inference", {{"date_from", "2021-01-01"}, {"date_to", "2020-01-01"}}}})),
                    InvalidInput);
    const ModelSetup m = model_from_config(config_from_json(json{
        {"network", {{"labels", {"A", "B"}}, {"travel_cost", {{0, 1}, {1, 0}}}, {"kernel", {{"type", "power"}, {"p", 2}}}}},
        {"model", {{"congestion", {1, 1}}, {"transport", {0.5}}, {"capacities", {1}}, {"values", {{0, 1}}}}}}));
    CHECK(m.network.kernel.kind == Kernel::Kind::Power);
    CHECK(m.params.goods() == 1);
}

// ---- end to end through the executable ------------------------------------

namespace {

std::string cli() {
    const char* p = std::getenv("PORTMFG_CLI");
    return p ? p : "";
}

int run(const std::string& args, const fs::path& err) {
    const std::string cmd = cli() + " " + args + " 2>" + err.string() + " >/dev/null";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json read_json(const fs::path& p) { return json::parse(read_file(p.string())); }

const json kSymmetric = {
    {"seed", 0},
    {"network", {{"labels", {"A", "B", "C"}}, {"travel_cost", {{0, 1, 1}, {1, 0, 1}, {1, 1, 0}}}}},
    {"model", {{"congestion", {1, 1, 1}}, {"transport", {0}}, {"capacities", {3}}, {"values", {{0, 0, 0}}}}}};

}  // namespace

TEST_CASE("cli: solve then validate the symmetric instance") {
    if (cli().empty()) return;
    TempDir d;
    const std::string cfg = d.file("sym.json", kSymmetric.dump());
    const fs::path out = d.path / "solve";
    REQUIRE(run("solve --config " + cfg + " --out " + out.string(), d.path / "err") == 0);
    const json s = read_json(out / "solve.json");
    CHECK(s["converged"] == true);
    CHECK(s["iterations"] == 1);
    CHECK(read_file((out / "field.csv").string()) == "good,port,phi\ng1,A,1\ng1,B,1\ng1,C,1\n");
    const json m = read_json(out / "manifest.json");
    CHECK(m["status"] == "ok");
    CHECK(m["outputs"]["field.csv"] == file_sha256((out / "field.csv").string()));
    CHECK(m["config_hash"].get<std::string>().size() == 64);
    CHECK(m["inputs"].contains(cfg));

    REQUIRE(run("validate --config " + cfg + " --input " + out.string() + " --out " + (d.path / "val").string(),
                d.path / "err") == 0);
    const json v = read_json(d.path / "val" / "validation.json");
    CHECK(v["pass"] == true);

    REQUIRE(run("report --input " + out.string() + " --out " + (d.path / "rep").string(), d.path / "err") == 0);
    CHECK(read_file((d.path / "rep" / "report_phi.csv").string()) == read_file((out / "field.csv").string()));
}

TEST_CASE("cli: check reports degeneracy as a finding") {
    if (cli().empty()) return;
    TempDir d;
    json doc = kSymmetric;
    doc["model"]["values"] = {{0.1, -0.3, 0.2}};
    const std::string cfg = d.file("c.json", doc.dump());
    REQUIRE(run("check --config " + cfg + " --out " + (d.path / "chk").string(), d.path / "err") == 0);
    const json c = read_json(d.path / "chk" / "check.json");
    CHECK(c["verdict"] == "degenerate");
    CHECK(fs::exists(d.path / "chk" / "omega.csv"));
}

TEST_CASE("cli: simulate then infer recovers the truth") {
    if (cli().empty()) return;
    TempDir d;
    const std::string sim = d.file("sim.json", json{{"seed", 21}, {"synthetic", {{"K", 4}, {"horizon_days", 600}}}}.dump());
    REQUIRE(run("simulate --config " + sim + " --out " + (d.path / "s").string(), d.path / "err") == 0);
    const std::string inf = d.file(
        "inf.json", json{{"seed", 21},
                         {"paths", {{"flows", (d.path / "s" / "flows.csv").string()},
                                    {"distances", (d.path / "s" / "distances.csv").string()}}}}
                        .dump());
    REQUIRE(run("infer --config " + inf + " --out " + (d.path / "s").string(), d.path / "err") == 0);
    const json truth = read_json(d.path / "s" / "truth.json"), cal = read_json(d.path / "s" / "calibration.json");
    CHECK(cal["transport_cost"].get<double>() == doctest::Approx(truth["transport"][0].get<double>()).epsilon(1e-4));
    for (int j = 0; j < 4; ++j) {
        CHECK(cal["congestion"][j].get<double>() == doctest::Approx(truth["congestion"][j].get<double>()).epsilon(1e-4));
        CHECK(cal["values"][j].get<double>() == doctest::Approx(truth["values"][0][j].get<double>()).epsilon(1e-4).scale(1));
    }
    CHECK(cal["usable_routes"] == 12);
    REQUIRE(run("report --input " + (d.path / "s").string(), d.path / "err") == 0);
    for (const char* f : {"report_A.csv", "report_B.csv", "report_r.csv", "report_truth.csv"})
        CHECK(fs::exists(d.path / "s" / "report" / f));
}

TEST_CASE("cli: error records and exit statuses") {
    if (cli().empty()) return;
    TempDir d;
    // input error: malformed model block
    json bad = kSymmetric;
    bad["model"]["congestion"] = {1, 1};
    const std::string cfg = d.file("bad.json", bad.dump());
    CHECK(run("solve --config " + cfg + " --out " + (d.path / "o1").string(), d.path / "err1") == 1);
    const json e = read_json(d.path / "o1" / "error.json");
    CHECK(e["code"] == "InvalidInput");
    CHECK(json::parse(read_file((d.path / "err1").string()))["exit_status"] == 1);
    CHECK(read_json(d.path / "o1" / "manifest.json")["status"] == "error");

    // numerical failure: iteration budget too small to converge
    SUBCASE("not converged") {
        json slow = kSymmetric;
        slow["model"]["congestion"] = {0.8, 1.0, 1.2};
        slow["model"]["transport"] = {0.3};
        slow["model"]["values"] = {{0.05, -0.02, -0.03}};
        slow["solver"] = {{"max_iter", 1}};
        const std::string c2 = d.file("slow.json", slow.dump());
        CHECK(run("solve --config " + c2 + " --out " + (d.path / "o2").string(), d.path / "err2") == 2);
        CHECK(read_json(d.path / "o2" / "manifest.json")["status"] == "not_converged");
    }
    SUBCASE("bad flow file") {
        const std::string flows = d.file("f.csv", "date,origin,destination,good,tons\n2020-01-01,A,B,g,-4\n");
        const std::string c3 = d.file("inf.json", json{{"paths", {{"flows", flows}}}, {"network", kSymmetric["network"]}}.dump());
        CHECK(run("infer --config " + c3 + " --out " + (d.path / "o3").string(), d.path / "err3") == 1);
        CHECK(read_json(d.path / "o3" / "error.json")["code"] == "NegativeQuantity");
    }
    CHECK(run("solve", d.path / "err4") == 1);
}
