#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mfc/experiment.hpp"

using namespace mfc;
namespace fs = std::filesystem;

namespace {

std::string minimal_config(const std::string& extra = "") {
    return R"({
      "model": {"name": "interbank", "params": {
        "a": 1.0, "b": 1.0, "c": 1.0, "sigma": 0.3, "rho": 0.5,
        "epsilon": 0.5, "beta": 0.5, "kappa": 0.5, "x0": 1.0}},
      "generator": {"D": 1, "rates": [[0.0]]},
      "grid": {"T": 1.0, "M": 10},
      "N": 100,
      "seed": 7)" +
           extra + "\n}";
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mfc_test_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("config parsing accepts the minimal config") {
    const ExperimentConfig cfg = ExperimentConfig::parse(minimal_config());
    CHECK(cfg.N == 100);
    CHECK(cfg.grid.M == 10);
    CHECK(cfg.interbank.a[0] == 1.0);
    CHECK(cfg.interbank.T == 1.0);
}

TEST_CASE("missing generator block names the field") {
    const std::string bad = R"({
      "model": {"name": "interbank", "params": {
        "a": 1.0, "b": 1.0, "c": 1.0, "sigma": 0.3, "rho": 0.5,
        "epsilon": 0.5, "beta": 0.5, "kappa": 0.5}},
      "grid": {"T": 1.0, "M": 10},
      "N": 100, "seed": 7})";
    try {
        ExperimentConfig::parse(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("generator") != std::string::npos);
    }
}

TEST_CASE("invalid JSON and bad fields raise ConfigError") {
    CHECK_THROWS_AS(ExperimentConfig::parse("{not json"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse(minimal_config(R"(, "control": {"type": "bogus"})")),
                    ConfigError);
    // convexity violation is a config-level validation failure
    const std::string convexity_bad = R"({
      "model": {"name": "interbank", "params": {
        "a": 1.0, "b": 1.0, "c": 1.0, "sigma": 0.3, "rho": 1.0,
        "epsilon": 0.5, "beta": 0.5, "kappa": 0.5}},
      "generator": {"D": 1, "rates": [[0.0]]},
      "grid": {"T": 1.0, "M": 10},
      "N": 100, "seed": 7})";
    CHECK_THROWS_AS(ExperimentConfig::parse(convexity_bad), ConfigError);
}

TEST_CASE("run_simulate writes summary with M+1 rows and reruns byte-identically") {
    const ExperimentConfig cfg = ExperimentConfig::parse(minimal_config());
    RunContext ctx;
    ctx.out_dir = temp_dir("simulate_a");
    ctx.threads = 1;
    CHECK(run_simulate(cfg, ctx) == 0);

    const std::string summary = read_file(ctx.out_dir / "summary.csv");
    int lines = 0;
    for (char c : summary)
        if (c == '\n') ++lines;
    CHECK(lines == cfg.grid.M + 1 + 1);  // header + M+1 rows

    RunContext ctx2;
    ctx2.out_dir = temp_dir("simulate_b");
    ctx2.threads = 4;
    CHECK(run_simulate(cfg, ctx2) == 0);
    for (const char* f : {"ensemble.csv", "summary.csv", "jumps.csv", "manifest.json"})
        CHECK(read_file(ctx.out_dir / f) == read_file(ctx2.out_dir / f));
}

TEST_CASE("run_check passes for the riccati candidate and fails for a shifted one") {
    std::string body = minimal_config(
        R"(, "control": {"type": "riccati_feedback"},
           "adjoint": {"method": "explicit"},
           "checker": {"checks": ["sufficient", "singular"],
                       "control_grid_points": 41})");
    ExperimentConfig cfg = ExperimentConfig::parse(body);
    RunContext ctx;
    ctx.out_dir = temp_dir("check_good");
    CHECK(run_check(cfg, ctx) == 0);
    CHECK(fs::exists(ctx.out_dir / "report.json"));

    // suboptimal candidate: open-loop u = 0.8 fails the maximum condition
    std::string bad = minimal_config(
        R"(, "control": {"type": "open_loop", "u_table": [0.8]},
           "adjoint": {"method": "lsmc"},
           "checker": {"checks": ["sufficient"], "control_grid_points": 41})");
    ExperimentConfig cfg_bad = ExperimentConfig::parse(bad);
    RunContext ctx_bad;
    ctx_bad.out_dir = temp_dir("check_bad");
    CHECK(run_check(cfg_bad, ctx_bad) == 1);
}

TEST_CASE("infinite variational tolerance passes trivially") {
    std::string body = minimal_config(
        R"(, "control": {"type": "open_loop", "u_table": [0.8]},
           "adjoint": {"method": "lsmc"},
           "checker": {"checks": ["variational"], "tol_vi": "inf",
                       "control_grid_points": 5})");
    ExperimentConfig cfg = ExperimentConfig::parse(body);
    RunContext ctx;
    ctx.out_dir = temp_dir("check_inf");
    CHECK(run_check(cfg, ctx) == 0);
}

TEST_CASE("run_oracle emits the brute-force table and a verdict") {
    std::string body = minimal_config(
        R"(, "oracle": {"control_values": [-0.5, 0.0, 0.5], "N": 400})");
    ExperimentConfig cfg = ExperimentConfig::parse(body);
    cfg.grid = TimeGrid::uniform(1.0, 3);
    cfg.interbank.T = 1.0;
    RunContext ctx;
    ctx.out_dir = temp_dir("oracle");
    CHECK(run_oracle(cfg, ctx) == 0);
    const std::string table = read_file(ctx.out_dir / "brute_table.csv");
    int lines = 0;
    for (char c : table)
        if (c == '\n') ++lines;
    CHECK(lines == 27 + 1);  // 3^3 controls + header
    const std::string verdict = read_file(ctx.out_dir / "oracle_summary.txt");
    CHECK(verdict.find("within 2*SE") != std::string::npos);
}

TEST_CASE("run_validate_model passes for the built-in model") {
    const ExperimentConfig cfg = ExperimentConfig::parse(minimal_config());
    RunContext ctx;
    ctx.out_dir = temp_dir("validate");
    CHECK(run_validate_model(cfg, ctx) == 0);
}

TEST_CASE("manifest records version, hash and the config copy") {
    const ExperimentConfig cfg = ExperimentConfig::parse(minimal_config());
    RunContext ctx;
    ctx.out_dir = temp_dir("manifest");
    run_simulate(cfg, ctx);
    const std::string manifest = read_file(ctx.out_dir / "manifest.json");
    CHECK(manifest.find("mfcontrol") != std::string::npos);
    CHECK(manifest.find("config_hash") != std::string::npos);
    CHECK(manifest.find("\"seed\": 7") != std::string::npos);
}
