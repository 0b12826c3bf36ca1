// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// taplab run | bound | summarize

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "taplab/conv/quadratic.hpp"
#include "taplab/exp/config.hpp"
#include "taplab/exp/runner.hpp"

namespace fs = std::filesystem;
using namespace taplab;

namespace {

int cmd_run(const std::string& config, const std::string& mode, std::optional<std::uint64_t> seed,
            const std::string& output_dir) {
    auto cfg = exp::load_config(config);
    if (!mode.empty()) cfg.mode = exp::parse_mode(mode);
    if (seed) cfg.set_seed(*seed);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    const auto r = exp::run_config(cfg);
    std::cout << "run " << r.run_id << " -> " << r.dir.string() << "\n\n" << exp::format_summary(r.summary);
    return 0;
}

int cmd_bound(const std::string& config, const std::string& output_dir) {
    auto cfg = exp::load_bound_config(config);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    const auto fed = conv::make_quadratic_federation(cfg.problem);
    const double alpha = cfg.alpha > 0.0 ? cfg.alpha : conv::lr_cap(fed.L, cfg.tau);
    const auto rep = conv::verify_bound(fed, cfg.tau, cfg.T, {alpha, cfg.diminishing}, cfg.trials, cfg.seed);

    const auto dir = fs::path(cfg.output_dir) / cfg.name;
    fs::create_directories(dir);
    std::ofstream(dir / "bound.json", std::ios::trunc) << conv::bound_report_json(rep) << "\n";
    std::ofstream(dir / "bound_curve.csv", std::ios::trunc) << conv::bound_curve_csv(rep);

    std::printf("L=%.6g sigma=%.6g Z=%.6g C_K=%.6g R=%zu tau=%zu alpha=%.6g trials=%zu\n", rep.L, rep.sigma, rep.Z,
                rep.C_K, rep.R, rep.tau, rep.alpha, rep.trials);
    std::printf("%8s %14s %14s %14s %14s %14s %14s %s\n", "T", "lhs_upper", "rhs", "optimality", "drift",
                "heterogeneity", "noise", "holds");
    for (const auto& c : rep.checkpoints) {
        std::printf("%8zu %14.6g %14.6g %14.6g %14.6g %14.6g %14.6g %s\n", c.T, c.lhs_upper, c.rhs.total,
                    c.rhs.optimality, c.rhs.drift, c.rhs.heterogeneity, c.rhs.noise, c.holds ? "yes" : "NO");
    }
    std::printf("rhs decreasing: %s\nreport: %s\n", rep.rhs_decreasing ? "yes" : "no", dir.string().c_str());
    return rep.holds ? 0 : 2;
}

int cmd_summarize(const std::string& run, const std::string& output_dir) {
    const auto dir = exp::resolve_run(run, output_dir.empty() ? "runs" : output_dir);
    const auto s = exp::emit_metrics(dir);
    std::cout << "run " << dir.string() << "\n\n" << exp::format_summary(s) << "\nper-client validation loss\n";
    for (const auto& [c, l] : s.client_loss) std::printf("  client %zu  %.6g\n", c, l);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale TAP federated learning lab"};
    app.require_subcommand(1);

    std::string config, mode, output_dir, run;
    std::optional<std::uint64_t> seed;

    auto* run_cmd = app.add_subcommand("run", "Train one configuration and write its metrics");
    run_cmd->add_option("--config", config, "Experiment YAML")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--mode", mode, "local|fedavg|fedavg-post|tap|tap-nokd (overrides the config)")
        ->check(CLI::IsMember({"local", "fedavg", "fedavg-post", "tap", "tap-nokd"}));
    run_cmd->add_option("--seed", seed, "Run seed (overrides the config)");
    run_cmd->add_option("--output-dir", output_dir, "Directory for run folders (overrides the config)");

    auto* bound_cmd = app.add_subcommand("bound", "Check the convergence bound on a synthetic quadratic federation");
    bound_cmd->add_option("--config", config, "Bound YAML")->required()->check(CLI::ExistingFile);
    bound_cmd->add_option("--output-dir", output_dir, "Directory for the report (overrides the config)");

    auto* sum_cmd = app.add_subcommand("summarize", "Rebuild and print a run's summary");
    sum_cmd->add_option("--run", run, "Run id or run directory")->required();
    sum_cmd->add_option("--output-dir", output_dir, "Directory holding run folders (default runs)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run_cmd) return cmd_run(config, mode, seed, output_dir);
        if (*bound_cmd) return cmd_bound(config, output_dir);
        if (*sum_cmd) return cmd_summarize(run, output_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
