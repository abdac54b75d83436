#include "insens/scenario.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Args {
    std::string target;
    std::string config;
    std::uint64_t seed = 0;
    bool parallel = false;
    std::string out;
    std::string control;
};

void add_common(CLI::App* cmd, Args& a, const std::string& targets) {
    cmd->add_option("target", a.target, targets)->required();
    cmd->add_option("--config", a.config, "scenario file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", a.seed, "seed for randomized restarts");
    cmd->add_flag("--parallel", a.parallel, "solve the basis controls concurrently");
    cmd->add_option("--out", a.out, "output directory (overrides [output].dir)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Insensitizing controls for the heat equation under domain variations"};
    app.require_subcommand(1);
    Args a;
    CLI::App* verify = app.add_subcommand("verify", "independent checks");
    add_common(verify, a, "shape-derivative | control");
    verify->add_option("--control", a.control, "control container for 'verify control'")->check(CLI::ExistingFile);
    CLI::App* run = app.add_subcommand("run", "control synthesis");
    add_common(run, a, "approx | exact-fd | constructive");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const std::string verb = verify->parsed() ? "verify" : "run";
        const insens::Subcommand sub = insens::parse_subcommand(verb, a.target);
        const insens::ScenarioConfig config = insens::parse_config(a.config);
        insens::RunOptions opt;
        opt.seed = a.seed;
        opt.parallel = a.parallel;
        if (!a.out.empty()) {
            opt.out_dir = a.out;
        }
        if (!a.control.empty()) {
            opt.control_file = a.control;
        }
        const insens::RunReport rep = insens::run_scenario(config, sub, opt);
        std::cout << to_string(sub) << "  run " << rep.json["run_id"].get<std::string>() << "  "
                  << (rep.criteria_met ? "criteria met" : "best effort (criteria not met)") << '\n';
        for (const std::string& f : rep.files) {
            std::cout << "  wrote " << f << '\n';
        }
        return rep.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "insenskit: " << e.what() << '\n';
        return 1;
    }
}
