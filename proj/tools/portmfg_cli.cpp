#include "portmfg/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Stationary port-flow mean-field game: solve, check, infer, simulate, validate, report"};
    app.set_version_flag("--version", PORTMFG_VERSION);
    app.require_subcommand(1);

    pmfg::CommandArgs args;
    struct Sub {
        const char* name;
        const char* help;
        bool config, input;
    };
    const Sub subs[] = {
        {"solve", "compute the stationary equilibrium by damped fixed point", true, false},
        {"check", "build the linear system and report the existence/uniqueness verdict", true, false},
        {"infer", "estimate per-route regressions and calibrate (c, r, v)", true, false},
        {"simulate", "generate a synthetic flow panel with known ground truth", true, false},
        {"validate", "re-check a saved equilibrium (field.csv, policy.csv)", true, true},
        {"report", "tabulate saved results", false, true},
    };
    for (const auto& s : subs) {
        auto* sc = app.add_subcommand(s.name, s.help);
        if (s.config) sc->add_option("--config,-c", args.config, "configuration JSON")->required()->check(CLI::ExistingFile);
        sc->add_option("--out,-o", args.out, "output directory (overrides paths.output)");
        if (s.input) sc->add_option("--input,-i", args.input, "directory of a previous run")->required()->check(CLI::ExistingDirectory);
        sc->callback([&args, name = std::string(s.name)] { args.command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    return pmfg::run_command(args, std::cerr);
}
