#include "reptree/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    using namespace reptree;

    CLI::App app{"Replica-tree federated learning simulator"};
    app.require_subcommand(1);

    cli::RunOptions run_opts;
    std::string config_path;
    std::string method;
    std::uint64_t seed = 0;
    std::string out_dir = "out";

    auto add_run_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Key-value config file");
        cmd->add_option("--method", method, "reptreefl | repfl | fedavg | standalone | centralized");
        cmd->add_option("--seed", seed, "Root seed");
        cmd->add_option("--out", out_dir, "Output directory");
        cmd->add_option("--parallel", run_opts.parallel, "Maximum concurrent workers")->check(CLI::PositiveNumber);
        cmd->add_option("--set", run_opts.overrides, "Config override key=value (repeatable)");
    };

    auto* run = app.add_subcommand("run", "Run one cross-validated experiment");
    add_run_flags(run);

    auto* sweep = app.add_subcommand("sweep", "Run an ablation sweep over one parameter");
    add_run_flags(sweep);
    std::string sweep_param;
    std::vector<std::string> sweep_values;
    sweep->add_option("--param", sweep_param,
                      "perturbation_rate | depth | aggregation | perturbation_mode | client_dataset_size")
        ->required();
    sweep->add_option("--values", sweep_values, "Sweep values")->required()->delimiter(',');

    auto* plot = app.add_subcommand("plotdata", "Export results as long-format CSV");
    std::vector<std::string> result_dirs;
    std::string plot_out;
    plot->add_option("dirs", result_dirs, "Result directories");
    plot->add_option("--out", plot_out, "Output CSV (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    auto finish_run_opts = [&](CLI::App* cmd) {
        if (!config_path.empty()) run_opts.config_path = config_path;
        if (cmd->count("--method")) run_opts.method = method;
        if (cmd->count("--seed")) run_opts.seed = seed;
        run_opts.out_dir = out_dir;
    };

    if (run->parsed()) {
        finish_run_opts(run);
        return cli::cmd_run(run_opts, std::cerr);
    }
    if (sweep->parsed()) {
        finish_run_opts(sweep);
        Sweep spec;
        try {
            spec.param = parse_sweep_param(sweep_param);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
        spec.values = sweep_values;
        return cli::cmd_sweep(run_opts, spec, std::cerr);
    }

    std::vector<std::filesystem::path> dirs(result_dirs.begin(), result_dirs.end());
    if (plot_out.empty()) {
        return cli::cmd_plotdata(dirs, std::cout, std::cerr);
    }
    std::ofstream out(plot_out);
    if (!out) {
        std::cerr << "error: cannot write '" << plot_out << "'\n";
        return 1;
    }
    return cli::cmd_plotdata(dirs, out, std::cerr);
}
