#ifndef MFC_EXPERIMENT_HPP
#define MFC_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mfc/adjoint.hpp"
#include "mfc/forward_sim.hpp"
#include "mfc/mp_check.hpp"
#include "mfc/oracle.hpp"

namespace mfc {

/// Parsed experiment configuration (JSON, one file per experiment). Only the
/// inter-bank model is configurable from files; custom coefficient bundles
/// are built in code.
struct ExperimentConfig {
    InterbankParams interbank;
    GeneratorMatrix generator;
    TimeGrid grid;
    int N = 1000;
    std::uint64_t seed = 0;
    int initial_regime = 1;

    struct ControlConfig {
        std::string type = "zero";  // zero | open_loop | riccati_feedback | mp_feedback
        std::vector<double> u_table;
        std::vector<SingularAtom> atoms;
        std::vector<double> density;
        int sweeps = 2;  // mp_feedback fixed-point sweeps
    };
    ControlConfig control;

    struct AdjointConfig {
        std::string method = "explicit";  // explicit | lsmc | volterra
        int basis_order = 2;
        int max_iterations = 200;
        double tol = 1e-10;
    };
    AdjointConfig adjoint;

    struct CheckerConfig {
        std::vector<std::string> checks = {"sufficient", "singular", "compare"};
        std::optional<double> tol_vi;  // absent: 5 h + 3 SE(candidate cost)
        double tol_singular = 1e-6;
        double tol_concavity = 1e-5;
        double tol_max_condition = 1e-6;
        double frac_cap = -1.0;  // < 0: 1/sqrt(N)
        int control_grid_points = 9;
        int concavity_samples = 200;
        int perturbations = 20;
        double perturbation_amplitude = 0.5;
    };
    CheckerConfig checker;

    struct OracleConfig {
        std::vector<double> control_values;
        std::vector<double> atom_times;
        std::vector<std::vector<double>> atom_sizes;
        int N = 2000;
        long long max_controls = 1000000;
    };
    OracleConfig oracle;

    struct ValidateConfig {
        int samples = 200;
        double tol = 1e-6;
    };
    ValidateConfig validate;

    std::string output_dir;      // optional; --out overrides
    std::string canonical_json;  // normalized dump used for the manifest/hash

    static ExperimentConfig load(const std::filesystem::path& file);
    static ExperimentConfig parse(const std::string& json_text);
};

struct RunContext {
    std::filesystem::path out_dir;
    int threads = 1;
};

// Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 numerical
// failure. The runners return codes; the CLI maps thrown ConfigError /
// ValidationError to 2 and NumericalError to 3.
int run_simulate(const ExperimentConfig& config, const RunContext& ctx);
int run_adjoint(const ExperimentConfig& config, const RunContext& ctx);
int run_check(const ExperimentConfig& config, const RunContext& ctx);
int run_oracle(const ExperimentConfig& config, const RunContext& ctx);
int run_validate_model(const ExperimentConfig& config, const RunContext& ctx);

/// Simulation + adjoint solve shared by the check/adjoint commands,
/// including the mp_feedback fixed-point sweeps.
struct PipelineResult {
    ControlPair control;
    ParticleEnsemble ensemble;
    AdjointSample adjoint;
    std::optional<RiccatiSolution> riccati;
};
PipelineResult run_pipeline(const ExperimentConfig& config, int threads);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace mfc

#endif
