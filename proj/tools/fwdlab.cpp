#include "fwd/experiment.hpp"
#include "fwd/io.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>

int main(int argc, char** argv) {
    CLI::App app{"fwdlab: forward utility experiment runner"};
    app.require_subcommand(1);

    std::string config_path, report_dir, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> paths, dt_levels;

    auto* run = app.add_subcommand("run", "run one experiment config");
    run->add_option("config", config_path, "TOML config file")->required();
    run->add_option("--seed", seed, "override lattice.seed");
    run->add_option("--paths", paths, "override lattice.n_paths")->check(CLI::PositiveNumber);
    run->add_option("--dt-levels", dt_levels, "dt-halving levels for the convergence study")->check(CLI::Range(1, 6));
    run->add_option("--out", out, "output root (default $FWDLAB_OUT or ./fwdlab-out)");

    auto* report = app.add_subcommand("report", "summarize report.json files under a directory");
    report->add_option("dir", report_dir, "directory holding report.json files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            fwd::ExperimentConfig cfg = [&] {
                try {
                    return fwd::load_config(config_path);
                } catch (const fwd::StageError&) {
                    throw;
                } catch (const fwd::Error& e) {
                    throw fwd::StageError("config", e);
                }
            }();
            fwd::apply_overrides(cfg, seed, paths, dt_levels);
            const auto root = out.empty() ? fwd::default_output_root() : std::filesystem::path(out);
            const fwd::RunResult r = fwd::run_experiment(cfg, root, &std::cout);
            std::cout << (r.exit_code == 0 ? "all checks pass" : "some checks failed") << "; report at "
                      << (r.dir / "report.json").string() << '\n';
            return r.exit_code;
        }
        const fwd::ReportSummary s = fwd::summarize_reports(report_dir);
        std::cout << s.table;
        return s.exit_code;
    } catch (const fwd::StageError& e) {
        std::cerr << "error: " << e.what() << "\nhint: " << e.hint() << '\n';
        return 2;
    } catch (const fwd::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
