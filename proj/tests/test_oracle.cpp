#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "mfc/oracle.hpp"

using namespace mfc;

namespace {

InterbankParams coarse_params() {
    InterbankParams p;
    p.generator = GeneratorMatrix::single_state();
    p.a = {1.0};
    p.b = {1.0};
    p.c = {1.0};
    p.sigma = 0.3;
    p.rho = 0.5;
    p.epsilon = 0.5;
    p.beta = 0.5;
    p.kappa = 0.5;
    p.x0 = 1.0;
    p.T = 1.0;
    p.u_lo = -2.0;
    p.u_hi = 2.0;
    return p;
}

}  // namespace

TEST_CASE("static separable brute force finds the analytic argmax") {
    // f = -(u - 1)^2, no dynamics: best u = 1 at every step, J = 0
    ModelSpec m = ModelSpec::empty(1);
    m.running_cost.value = [](double, double, double, double u, int) {
        return -(u - 1.0) * (u - 1.0);
    };
    m.control_set = ControlInterval{-2.0, 2.0};
    m.T = 1.0;

    CoarseInstance inst;
    inst.grid = TimeGrid::uniform(1.0, 3);
    inst.control_values = {0.0, 0.5, 1.0, 1.5};
    inst.N = 16;
    inst.seed = 5;
    const BruteForceResult res = brute_force_open_loop(m, GeneratorMatrix::single_state(), inst);
    CHECK(res.J == doctest::Approx(0.0).epsilon(1e-12));
    const OpenLoopControl& best = std::get<OpenLoopControl>(res.best.regular);
    for (double u : best.values) CHECK(u == doctest::Approx(1.0));
}

TEST_CASE("enumeration guard refuses with the computed cardinality") {
    ModelSpec m = ModelSpec::empty(1);
    CoarseInstance inst;
    inst.grid = TimeGrid::uniform(1.0, 5);
    inst.control_values = std::vector<double>(9, 0.0);
    for (int i = 0; i < 9; ++i) inst.control_values[static_cast<std::size_t>(i)] = i * 0.1;
    inst.atom_times = {0.2, 0.4, 0.6};
    inst.atom_sizes = {{0.0, 0.1, 0.2, 0.3}, {0.0, 0.1, 0.2, 0.3}, {0.0, 0.1, 0.2, 0.3}};
    inst.N = 10;
    // 9^5 * 4^3 = 3779136 > 10^6
    try {
        brute_force_open_loop(m, GeneratorMatrix::single_state(), inst);
        FAIL("guard did not trigger");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("3779136") != std::string::npos);
    }
}

TEST_CASE("brute force is deterministic and thread-count independent") {
    const InterbankParams p = coarse_params();
    const ModelSpec m = interbank_model(p);
    CoarseInstance inst;
    inst.grid = TimeGrid::uniform(1.0, 3);
    inst.control_values = {-0.4, 0.0, 0.4};
    inst.N = 200;
    inst.seed = 9;
    const BruteForceResult a = brute_force_open_loop(m, p.generator, inst);
    SimOptions threaded;
    threaded.threads = 4;
    const BruteForceResult b = brute_force_open_loop(m, p.generator, inst, threaded);
    REQUIRE(a.table.size() == b.table.size());
    for (std::size_t i = 0; i < a.table.size(); ++i) {
        CHECK(a.table[i].J == b.table[i].J);
        CHECK(a.table[i].SE == b.table[i].SE);
    }
    CHECK(a.best_id == b.best_id);
}

TEST_CASE("negative singular price makes the zero atom dominate") {
    // generic-form kappa = -kappa_app < 0 prices any atom mass negatively
    const InterbankParams p = coarse_params();
    const ModelSpec m = interbank_model(p);
    CoarseInstance inst;
    inst.grid = TimeGrid::uniform(1.0, 2);
    inst.control_values = {0.0};
    inst.atom_times = {0.5};
    inst.atom_sizes = {{0.0, 0.25, 0.5, 1.0}};
    inst.N = 400;
    inst.seed = 3;
    const BruteForceResult res = brute_force_open_loop(m, p.generator, inst);
    REQUIRE(res.table.size() == 4);
    CHECK(std::get<OpenLoopControl>(res.best.regular).values.size() == 2);
    CHECK(res.best.singular.atoms.empty());
    for (const auto& row : res.table)
        if (row.atom_choice[0] > 0.0) CHECK(row.J < res.J);
}

TEST_CASE("riccati oracle degenerate feedback") {
    InterbankParams p = coarse_params();
    p.beta = 0.0;
    p.epsilon = p.rho * p.rho;
    const TimeGrid grid = TimeGrid::uniform(1.0, 10);
    const RiccatiOracle oracle = riccati_oracle(p, grid);
    for (double eta : oracle.eta) CHECK(eta == doctest::Approx(0.0));
    // u* = rho (mu - x)
    CHECK(oracle.feedback.rule(0.3, 1.2, 1.0, 1, std::nullopt) ==
          doctest::Approx(p.rho * (1.0 - 1.2)).epsilon(1e-12));
    CHECK(oracle.predicted_q(5) == doctest::Approx(0.0));
}

TEST_CASE("riccati RK4 halving changes eta at fourth order") {
    const InterbankParams p = coarse_params();
    const TimeGrid grid = TimeGrid::uniform(1.0, 4);  // coarse so RK4 error is visible
    const double ref = solve_riccati(p, grid, 64).eta[0];
    const double e1 = std::abs(solve_riccati(p, grid, 1).eta[0] - ref);
    const double e2 = std::abs(solve_riccati(p, grid, 2).eta[0] - ref);
    const double order = std::log2(e1 / e2);
    CHECK(order > 3.0);
    CHECK(order < 5.0);
}

TEST_CASE("bsde residual: exact constant solution has zero defect") {
    // h = c x, everything else zero: p = c, q = 0, s = 0 solves the BSDE exactly
    const double c = 1.3;
    ModelSpec m = ModelSpec::empty(1);
    m.diffusion = Coefficient::constant(0.4);
    m.terminal_cost.value = [c](double x, double, int) { return c * x; };
    m.terminal_cost.dx = [c](double, double, int) { return c; };
    const GeneratorMatrix gen = GeneratorMatrix::single_state();
    const TimeGrid grid = TimeGrid::uniform(1.0, 12);
    const ParticleEnsemble ens = simulate(m, gen, ControlPair::zero(), grid, 100, 8);

    AdjointSample adj;
    adj.resize(grid, 100, 1);
    for (double& v : adj.p) v = c;
    const ResidualReport rep = bsde_residual(m, gen, ens, adj);
    CHECK(rep.aggregate_rms == doctest::Approx(0.0));

    // perturbing p leaves a defect of the driver-sensitivity order
    ModelSpec m2 = m;
    m2.drift.value = [](double, double x, double, double, int) { return -x; };
    m2.drift.dx = [](double, double, double, double, int) { return -1.0; };
    const ParticleEnsemble ens2 = simulate(m2, gen, ControlPair::zero(), grid, 100, 8);
    AdjointSample exact = solve_adjoint_lsmc(m2, gen, ens2, 2);
    const double base = bsde_residual(m2, gen, ens2, exact).aggregate_rms;
    AdjointSample shifted = exact;
    for (double& v : shifted.p) v += 1.0;
    const double bumped = bsde_residual(m2, gen, ens2, shifted).aggregate_rms;
    CHECK(bumped > base);
    // b_x = -1: the per-step defect from the shift is ~ |b_x| h
    CHECK(bumped >= 0.5 * grid.h);
}

TEST_CASE("brute-force optimum does not beat the riccati candidate by over 2 SE") {
    const InterbankParams p = coarse_params();
    const ModelSpec m = interbank_model(p);
    CoarseInstance inst;
    inst.grid = TimeGrid::uniform(1.0, 4);
    inst.control_values = {-0.5, -0.25, 0.0, 0.25, 0.5};
    inst.N = 2000;
    inst.seed = 77;
    const BruteForceResult bf = brute_force_open_loop(m, p.generator, inst);

    // MP candidate: riccati feedback snapped to the instance's control grid
    const RiccatiOracle oracle = riccati_oracle(p, inst.grid);
    const std::vector<double> values = inst.control_values;
    const FeedbackControl base = oracle.feedback;
    FeedbackControl snapped;
    snapped.rule = [base, values](double t, double x, double mu, int regime,
                                  std::optional<double> pp) {
        const double u = base.rule(t, x, mu, regime, pp);
        double bestv = values.front();
        for (double v : values)
            if (std::abs(v - u) < std::abs(bestv - u)) bestv = v;
        return bestv;
    };
    const ControlPair candidate = ControlPair::feedback(snapped);
    const NoiseBundle noise = make_noise(p.generator, inst.grid, inst.N, inst.seed);
    const ParticleEnsemble ens = simulate_with_noise(m, noise, candidate);
    const CostEstimate cost = estimate_cost(m, ens, candidate);

    double mean_diff = 0.0, var = 0.0;
    for (int n = 0; n < inst.N; ++n)
        mean_diff += bf.best_per_particle[static_cast<std::size_t>(n)] -
                     cost.per_particle[static_cast<std::size_t>(n)];
    mean_diff /= inst.N;
    for (int n = 0; n < inst.N; ++n) {
        const double d = bf.best_per_particle[static_cast<std::size_t>(n)] -
                         cost.per_particle[static_cast<std::size_t>(n)] - mean_diff;
        var += d * d;
    }
    var /= (inst.N - 1);
    const double diff_se = std::sqrt(var / inst.N);
    CHECK(mean_diff <= 2.0 * diff_se);
}
