// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparsekv/sparsekv.hpp"

namespace {

// Exit codes by error category.
constexpr int kExitConfig = 2;
constexpr int kExitCapacity = 3;
constexpr int kExitRuntime = 4;

int exit_code_for(const sparsekv::Error& e) {
    switch (e.code()) {
    case sparsekv::ErrorCode::config: return kExitConfig;
    case sparsekv::ErrorCode::capacity: return kExitCapacity;
    default: return kExitRuntime;
    }
}

void write_sweep(const std::vector<sparsekv::SweepPoint>& pts, std::ostream& os) {
    os << "budget,mean_recall,mean_step_us,sim_tokens_per_s,total_bytes\n";
    for (const auto& p : pts) {
        os << p.budget << ',' << p.mean_recall << ',' << p.mean_step_us << ',' << p.sim_tokens_per_s << ','
           << static_cast<std::uint64_t>(p.total_bytes) << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-KV decode benchmark harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_path;
    std::vector<std::size_t> budgets;

    auto* run = app.add_subcommand("run", "Run one benchmark trajectory and write the report");
    run->add_option("--config", config_path, "JSON configuration")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_path, "CSV report path (summary goes to <path>.json)");

    auto* plan = app.add_subcommand("plan", "Print the sequence-length threshold table");
    plan->add_option("--config", config_path, "JSON configuration")->required()->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("sweep", "Recall and step time per retrieval budget");
    sweep->add_option("--config", config_path, "JSON configuration")->required()->check(CLI::ExistingFile);
    sweep->add_option("--budget", budgets, "Budgets to evaluate")->required()->delimiter(',');
    sweep->add_option("--out", out_path, "CSV output path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = sparsekv::load_config(config_path);
        if (*run) {
            if (!out_path.empty()) cfg.output = out_path;
            const auto report = sparsekv::run_benchmark(cfg);
            if (!cfg.output.empty()) sparsekv::write_report(report, cfg.output);
            std::cout << sparsekv::summary_json(report).dump(2) << '\n';
        } else if (*plan) {
            const auto p = sparsekv::make_plan(cfg.model, cfg.workload, cfg.hardware);
            sparsekv::write_plan(p, std::cout);
        } else if (*sweep) {
            const auto pts = sparsekv::run_sweep(cfg, budgets);
            if (out_path.empty()) {
                write_sweep(pts, std::cout);
            } else {
                std::ofstream os(out_path);
                write_sweep(pts, os);
            }
        }
    } catch (const sparsekv::ConfigError& e) {
        std::cerr << "configuration invalid:\n";
        for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
        return kExitConfig;
    } catch (const sparsekv::Error& e) {
        std::cerr << e.what() << '\n';
        return exit_code_for(e);
    }
    return 0;
}
