// Configuration-driven CLI over the mean-field singular control library:
// simulate / adjoint / check / oracle / validate-model, each consuming one
// JSON experiment config and writing reproducible outputs plus a manifest.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mfc/errors.hpp"
#include "mfc/experiment.hpp"
#include "mfc/version.hpp"

namespace {

int dispatch(const std::string& command, const mfc::ExperimentConfig& config,
             const mfc::RunContext& ctx) {
    if (command == "simulate") return mfc::run_simulate(config, ctx);
    if (command == "adjoint") return mfc::run_adjoint(config, ctx);
    if (command == "check") return mfc::run_check(config, ctx);
    if (command == "oracle") return mfc::run_oracle(config, ctx);
    if (command == "validate-model") return mfc::run_validate_model(config, ctx);
    std::cerr << "unknown command: " << command << "\n";
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(mfc::kVersion) +
                 " -- mean-field regime-switching singular control experiments"};
    app.set_version_flag("--version", mfc::kVersion);

    std::string config_path;
    std::string out_dir;
    int threads = 1;

    app.add_option("--config", config_path, "experiment config (JSON)")->required();
    app.add_option("--out", out_dir, "output directory (overrides config.output)");
    app.add_option("--threads", threads, "worker threads (outputs are independent of this)")
        ->default_val(1);

    app.require_subcommand(1);
    for (const char* name : {"simulate", "adjoint", "check", "oracle", "validate-model"})
        app.add_subcommand(name)->fallthrough();

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        const mfc::ExperimentConfig config = mfc::ExperimentConfig::load(config_path);
        mfc::RunContext ctx;
        ctx.out_dir = out_dir.empty() ? config.output_dir : out_dir;
        ctx.threads = threads;
        return dispatch(command, config, ctx);
    } catch (const mfc::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const mfc::ValidationError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const mfc::UnsupportedClassError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const mfc::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
