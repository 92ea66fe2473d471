#pragma once
#include "portmfg/equilibrium.hpp"
#include "portmfg/inference.hpp"
#include "portmfg/synthetic.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace pmfg {

struct RunConfig {
    nlohmann::json doc;  // effective document (after environment overrides)
    std::string source;  // file it came from, if any
    std::uint64_t seed = 0;
    std::string flows, distances, output;
    std::vector<std::string> overrides;  // environment variables that were applied
};

// environment: PORTMFG_FLOWS, PORTMFG_DISTANCES, PORTMFG_OUTPUT, PORTMFG_SEED
RunConfig config_from_json(nlohmann::json doc, bool apply_env = true);
RunConfig load_config(const std::string& path, bool apply_env = true);

struct ModelSetup {
    PortNetwork network;
    CostParameters params;
    GoodValues values;
    std::vector<std::string> warnings;
};

ModelSetup model_from_config(const RunConfig& cfg, bool need_model = true);
FixedPointOptions solver_options(const RunConfig& cfg);
InferenceConfig inference_config(const RunConfig& cfg);
SyntheticSpec synthetic_spec(const RunConfig& cfg);

struct CommandArgs {
    std::string command;  // solve | check | infer | simulate | validate | report
    std::string config;   // config document path
    std::string out;      // overrides paths.output
    std::string input;    // validate / report: directory of a previous run
};

// runs one subcommand; returns the process exit status (0 ok or finding, 1 input error, 2 numerical failure)
int run_command(const CommandArgs& args, std::ostream& log);

std::string good_name(int n);  // "g1", "g2", ...

}  // namespace pmfg
