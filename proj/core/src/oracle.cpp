#include "mfc/oracle.hpp"

#include <cmath>
#include <sstream>

#include "mfc/threading.hpp"

namespace mfc {

long long CoarseInstance::total_controls() const {
    long long total = 1;
    const long long vals = static_cast<long long>(control_values.size());
    for (int k = 0; k < grid.M; ++k) {
        if (total > max_controls) return total;  // avoid overflow on refusal paths
        total *= vals;
    }
    for (const auto& sizes : atom_sizes) {
        if (total > max_controls) return total;
        total *= static_cast<long long>(std::max<std::size_t>(1, sizes.size()));
    }
    return total;
}

void CoarseInstance::validate() const {
    if (control_values.empty()) throw ValidationError("coarse instance: empty control grid");
    if (atom_times.size() != atom_sizes.size())
        throw ValidationError("coarse instance: atom_times/atom_sizes length mismatch");
    if (N < 1) throw ValidationError("coarse instance: N must be >= 1");
    const long long total = total_controls();
    if (total > max_controls) {
        std::ostringstream msg;
        msg << "coarse instance: enumeration guard exceeded, " << total
            << " controls > limit " << max_controls;
        throw ValidationError(msg.str());
    }
}

BruteForceResult brute_force_open_loop(const ModelSpec& model, const GeneratorMatrix& gen,
                                       const CoarseInstance& inst, const SimOptions& opts) {
    inst.validate();
    const int M = inst.grid.M;
    const long long vals = static_cast<long long>(inst.control_values.size());
    const std::size_t atoms = inst.atom_times.size();

    long long u_combos = 1;
    for (int k = 0; k < M; ++k) u_combos *= vals;
    long long atom_combos = 1;
    for (const auto& sizes : inst.atom_sizes)
        atom_combos *= static_cast<long long>(std::max<std::size_t>(1, sizes.size()));
    const long long total = u_combos * atom_combos;

    SimOptions sim_opts = opts;
    sim_opts.initial_regime = inst.initial_regime;
    const NoiseBundle noise = make_noise(gen, inst.grid, inst.N, inst.seed, sim_opts);

    auto decode = [&](long long id, std::vector<double>& u, std::vector<double>& atom_choice) {
        long long rest = id;
        u.resize(static_cast<std::size_t>(M));
        for (int k = 0; k < M; ++k) {
            u[static_cast<std::size_t>(k)] =
                inst.control_values[static_cast<std::size_t>(rest % vals)];
            rest /= vals;
        }
        atom_choice.resize(atoms);
        for (std::size_t a = 0; a < atoms; ++a) {
            const long long n_sizes =
                static_cast<long long>(std::max<std::size_t>(1, inst.atom_sizes[a].size()));
            atom_choice[a] =
                inst.atom_sizes[a].empty()
                    ? 0.0
                    : inst.atom_sizes[a][static_cast<std::size_t>(rest % n_sizes)];
            rest /= n_sizes;
        }
    };

    auto build_control = [&](const std::vector<double>& u,
                             const std::vector<double>& atom_choice) {
        ControlPair control = ControlPair::open_loop(u);
        for (std::size_t a = 0; a < atoms; ++a) {
            if (atom_choice[a] > 0.0)
                control.singular.atoms.push_back(SingularAtom{inst.atom_times[a], atom_choice[a], {}});
        }
        return control;
    };

    BruteForceResult result;
    result.table.resize(static_cast<std::size_t>(total));

    parallel_for(static_cast<int>(total), opts.threads, [&](int begin, int end) {
        std::vector<double> u, atom_choice;
        for (int id = begin; id < end; ++id) {
            decode(id, u, atom_choice);
            const ControlPair control = build_control(u, atom_choice);
            SimOptions one;
            one.threads = 1;
            one.initial_regime = inst.initial_regime;
            const ParticleEnsemble ens = simulate_with_noise(model, noise, control, one);
            const CostEstimate cost = estimate_cost(model, ens, control);
            BruteForceRow& row = result.table[static_cast<std::size_t>(id)];
            row.id = id;
            row.u = u;
            row.atom_choice = atom_choice;
            row.J = cost.J;
            row.SE = cost.standard_error;
        }
    });

    long long best_id = 0;
    for (long long id = 1; id < total; ++id)
        if (result.table[static_cast<std::size_t>(id)].J >
            result.table[static_cast<std::size_t>(best_id)].J)
            best_id = id;

    const BruteForceRow& best_row = result.table[static_cast<std::size_t>(best_id)];
    result.best_id = best_id;
    result.J = best_row.J;
    result.SE = best_row.SE;
    result.best = build_control(best_row.u, best_row.atom_choice);
    {
        SimOptions one = opts;
        one.initial_regime = inst.initial_regime;
        const ParticleEnsemble ens = simulate_with_noise(model, noise, result.best, one);
        result.best_per_particle = estimate_cost(model, ens, result.best).per_particle;
    }
    return result;
}

RiccatiOracle riccati_oracle(const InterbankParams& params, const TimeGrid& grid,
                             int substeps) {
    if (!params.regime_independent())
        throw UnsupportedClassError("riccati_oracle: requires regime-independent a, b");
    RiccatiOracle oracle;
    oracle.grid = grid;
    oracle.sigma = params.sigma;
    oracle.eta = solve_riccati(params, grid, substeps).eta;

    const double b = params.b[0];
    const double rho = params.rho;
    const std::vector<double> eta = oracle.eta;
    const TimeGrid g = grid;
    oracle.feedback.rule = [eta, g, b, rho](double t, double x, double mu, int,
                                            std::optional<double>) {
        // nearest grid index; eta is continuous so this is O(h) exact
        int k = static_cast<int>(std::lround(t / g.T * g.M));
        k = std::max(0, std::min(g.M, k));
        const double p = -eta[static_cast<std::size_t>(k)] * (x - mu);
        return b * p + rho * (mu - x);
    };
    return oracle;
}

ResidualReport bsde_residual(const ModelSpec& model, const GeneratorMatrix& gen,
                             const ParticleEnsemble& ens, const AdjointSample& adjoint) {
    if (adjoint.N != ens.N || !(adjoint.grid == ens.grid))
        throw ValidationError("bsde_residual: adjoint/ensemble shape mismatch");
    const int N = ens.N;
    const int M = ens.grid.M;
    const int D = gen.dim;
    const double h = ens.grid.h;

    ResidualReport report;
    report.per_step_rms.assign(static_cast<std::size_t>(M), 0.0);

    std::vector<double> pk(static_cast<std::size_t>(N)), qk(static_cast<std::size_t>(N));
    std::vector<double> sk(static_cast<std::size_t>(N) * D);
    double total = 0.0;
    for (int k = 0; k < M; ++k) {
        for (int n = 0; n < N; ++n) {
            pk[static_cast<std::size_t>(n)] = adjoint.p_at(n, k);
            qk[static_cast<std::size_t>(n)] = adjoint.q_at(n, k);
            for (int j = 0; j < D; ++j)
                sk[static_cast<std::size_t>(n) * D + static_cast<std::size_t>(j)] =
                    adjoint.s_at(n, k, j + 1);
        }
        const std::vector<double> driver = adjoint_driver(model, gen, ens, k, pk, qk, sk);
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
            double r = adjoint.p_at(n, k + 1) - adjoint.p_at(n, k) +
                       driver[static_cast<std::size_t>(n)] * h -
                       adjoint.q_at(n, k) * ens.brownian(n, k);
            const auto& inc = ens.mart[static_cast<std::size_t>(n)];
            for (int j = 1; j <= D; ++j) r -= adjoint.s_at(n, k, j) * inc.mart(k, j - 1);
            acc += r * r;
        }
        report.per_step_rms[static_cast<std::size_t>(k)] =
            std::sqrt(acc / static_cast<double>(N));
        total += acc;
    }
    report.aggregate_rms = std::sqrt(total / (static_cast<double>(N) * M));
    return report;
}

}  // namespace mfc
