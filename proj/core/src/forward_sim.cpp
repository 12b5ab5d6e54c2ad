#include "mfc/forward_sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfc/adjoint.hpp"
#include "mfc/threading.hpp"

namespace mfc {

OpenLoopControl OpenLoopControl::common(std::vector<double> per_step) {
    OpenLoopControl c;
    c.M = static_cast<int>(per_step.size());
    c.values = std::move(per_step);
    c.N = 0;
    return c;
}

OpenLoopControl OpenLoopControl::per_particle(std::vector<double> table, int N, int M) {
    if (table.size() != static_cast<std::size_t>(N) * M)
        throw ValidationError("open-loop table shape mismatch");
    OpenLoopControl c;
    c.values = std::move(table);
    c.N = N;
    c.M = M;
    return c;
}

void SingularControl::validate(double T) const {
    double prev = -1.0;
    for (const auto& atom : atoms) {
        if (atom.time < 0.0 || atom.time > T)
            throw ValidationError("singular atom outside [0, T]");
        if (atom.time < prev) throw ValidationError("singular atoms must be time-sorted");
        prev = atom.time;
        if (atom.per_particle.empty()) {
            if (atom.size < 0.0) throw ValidationError("singular increments must be >= 0");
        } else {
            for (double s : atom.per_particle)
                if (s < 0.0) throw ValidationError("singular increments must be >= 0");
        }
    }
    for (double d : density)
        if (d < 0.0) throw ValidationError("singular density must be >= 0");
}

double SingularControl::total_mass(double h) const {
    double mass = 0.0;
    for (const auto& atom : atoms) {
        if (atom.per_particle.empty()) {
            mass += atom.size;
        } else {
            mass += *std::max_element(atom.per_particle.begin(), atom.per_particle.end());
        }
    }
    for (double d : density) mass += d * h;
    return mass;
}

NoiseBundle make_noise(const GeneratorMatrix& gen, const TimeGrid& grid, int N,
                       std::uint64_t seed, const SimOptions& opts) {
    gen.validate();
    if (N < 1) throw ValidationError("make_noise: N must be >= 1");
    NoiseBundle noise;
    noise.grid = grid;
    noise.N = N;
    noise.seed = seed;
    noise.regimes.resize(static_cast<std::size_t>(N));
    noise.mart.resize(static_cast<std::size_t>(N));
    noise.regime_at.assign(static_cast<std::size_t>(N) * (grid.M + 1), opts.initial_regime);
    noise.dB.assign(static_cast<std::size_t>(N) * grid.M, 0.0);

    const double sqrt_h = std::sqrt(grid.h);
    parallel_for(N, opts.threads, [&](int begin, int end) {
        for (int n = begin; n < end; ++n) {
            RegimePath path = sample_regime_path(gen, opts.initial_regime, grid,
                                                 seed, static_cast<std::uint64_t>(n));
            noise.mart[static_cast<std::size_t>(n)] = compensated_increments(path, gen);
            for (int k = 0; k <= grid.M; ++k)
                noise.regime_at[static_cast<std::size_t>(n) * (grid.M + 1) + k] =
                    path.regime_index[static_cast<std::size_t>(k)];
            noise.regimes[static_cast<std::size_t>(n)] = std::move(path);
            for (int k = 0; k < grid.M; ++k)
                noise.dB[static_cast<std::size_t>(n) * grid.M + k] =
                    sqrt_h * normal_at(seed, static_cast<std::uint64_t>(n),
                                       static_cast<std::uint64_t>(k));
        }
    });
    return noise;
}

namespace {

/// Step-assigned xi increments: an atom at tau lands on the first grid point
/// >= tau, i.e. contributes to the update over step step_of(tau); the
/// density part integrates as rate * h per step.
std::vector<double> assign_dxi(const SingularControl& xi, const TimeGrid& grid, int N) {
    std::vector<double> dxi(static_cast<std::size_t>(N) * grid.M, 0.0);
    if (xi.empty()) return dxi;
    if (!xi.density.empty() && static_cast<int>(xi.density.size()) != grid.M)
        throw ValidationError("singular density table must have M entries");
    for (const auto& atom : xi.atoms) {
        if (!atom.per_particle.empty() &&
            static_cast<int>(atom.per_particle.size()) != N)
            throw ValidationError("per-particle atom sizes must have N entries");
        const int k = grid.step_of(atom.time);
        for (int n = 0; n < N; ++n)
            dxi[static_cast<std::size_t>(n) * grid.M + k] += atom.size_for(n);
    }
    if (!xi.density.empty()) {
        for (int k = 0; k < grid.M; ++k) {
            const double mass = xi.density[static_cast<std::size_t>(k)] * grid.h;
            for (int n = 0; n < N; ++n) dxi[static_cast<std::size_t>(n) * grid.M + k] += mass;
        }
    }
    return dxi;
}

}  // namespace

ParticleEnsemble simulate_with_noise(const ModelSpec& model, const NoiseBundle& noise,
                                     const ControlPair& control, const SimOptions& opts) {
    const TimeGrid& grid = noise.grid;
    const int N = noise.N;
    const int M = grid.M;
    control.singular.validate(grid.T);

    const OpenLoopControl* open = std::get_if<OpenLoopControl>(&control.regular);
    const FeedbackControl* feedback = std::get_if<FeedbackControl>(&control.regular);
    if (open) {
        const int table_M = open->M == 0 ? static_cast<int>(open->values.size()) : open->M;
        if (open->is_common()) {
            if (table_M != M && !(open->values.size() == 1))
                throw ValidationError("open-loop control table does not match the grid");
        } else {
            if (open->M != M || open->N != N)
                throw ValidationError("per-particle open-loop table does not match (N, M)");
        }
        for (double v : open->values)
            if (!model.control_set.contains(v))
                throw ValidationError("open-loop control value outside A1");
    }
    if (feedback && feedback->p_source) {
        const AdjointSample& src = *feedback->p_source;
        if (src.N != N || !(src.grid == grid))
            throw ValidationError("feedback p_source is not aligned with this ensemble");
    }

    ParticleEnsemble ens;
    ens.grid = grid;
    ens.N = N;
    ens.seed = noise.seed;
    ens.states.assign(static_cast<std::size_t>(N) * (M + 1), model.x0);
    ens.regime_at = noise.regime_at;
    ens.dB = noise.dB;
    ens.regimes = noise.regimes;
    ens.mart = noise.mart;
    ens.mean_field.assign(static_cast<std::size_t>(M) + 1, 0.0);
    ens.applied_u.assign(static_cast<std::size_t>(N) * M, 0.0);
    ens.applied_dxi = assign_dxi(control.singular, grid, N);

    const double h = grid.h;
    const int D = model.regimes;

    // serial reduction keeps mu independent of the thread count
    auto empirical_mean = [&](int k) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) acc += model.mean_map(ens.x(n, k));
        return acc / static_cast<double>(N);
    };

    std::string error_msg;
    for (int k = 0; k < M; ++k) {
        const double mu_k = empirical_mean(k);
        ens.mean_field[static_cast<std::size_t>(k)] = mu_k;
        const double t_k = grid.t(k);

        parallel_for(N, opts.threads, [&](int begin, int end) {
            for (int n = begin; n < end; ++n) {
                const double x = ens.x(n, k);
                const int regime = ens.regime(n, k);
                double u;
                if (open) {
                    u = open->values.size() == 1 && open->is_common()
                            ? open->values[0]
                            : open->at(n, k);
                } else {
                    std::optional<double> p;
                    if (feedback->p_source) p = feedback->p_source->p_at(n, k);
                    u = model.control_set.clamp(feedback->rule(t_k, x, mu_k, regime, p));
                }
                ens.applied_u[static_cast<std::size_t>(n) * M + k] = u;

                double next = x + model.drift.value(t_k, x, mu_k, u, regime) * h +
                              model.diffusion.value(t_k, x, mu_k, u, regime) * ens.brownian(n, k);
                if (model.has_jump) {
                    const auto& inc = ens.mart[static_cast<std::size_t>(n)];
                    for (int j = 1; j <= D; ++j)
                        next += model.jump.value(t_k, x, mu_k, u, regime, j) * inc.mart(k, j - 1);
                }
                const double dxi = ens.dxi(n, k);
                if (dxi != 0.0) next += model.singular(t_k, regime) * dxi;

                if (!std::isfinite(next)) {
                    std::ostringstream msg;
                    msg << "simulate: non-finite state at particle " << n << ", step " << k + 1;
                    throw NumericalError(msg.str());
                }
                ens.states[static_cast<std::size_t>(n) * (M + 1) + k + 1] = next;
            }
        });
    }
    ens.mean_field[static_cast<std::size_t>(M)] = empirical_mean(M);
    return ens;
}

ParticleEnsemble simulate(const ModelSpec& model, const GeneratorMatrix& gen,
                          const ControlPair& control, const TimeGrid& grid, int N,
                          std::uint64_t seed, const SimOptions& opts) {
    if (gen.dim != model.regimes)
        throw ValidationError("simulate: generator dimension does not match the model");
    const NoiseBundle noise = make_noise(gen, grid, N, seed, opts);
    return simulate_with_noise(model, noise, control, opts);
}

CostEstimate estimate_cost(const ModelSpec& model, const ParticleEnsemble& ensemble,
                           const ControlPair& control) {
    const TimeGrid& grid = ensemble.grid;
    const int N = ensemble.N;
    const int M = grid.M;
    const double h = grid.h;

    CostEstimate est;
    est.per_particle.assign(static_cast<std::size_t>(N), 0.0);

    for (int n = 0; n < N; ++n) {
        double J = 0.0;
        for (int k = 0; k < M; ++k) {
            J += model.running_cost.value(grid.t(k), ensemble.x(n, k), ensemble.mu(k),
                                          ensemble.u(n, k), ensemble.regime(n, k)) *
                 h;
        }
        est.per_particle[static_cast<std::size_t>(n)] = J;
    }
    // singular cost: atoms priced at their own times, density per step
    for (const auto& atom : control.singular.atoms) {
        const double rate = model.singular_cost_rate(atom.time);
        for (int n = 0; n < N; ++n)
            est.per_particle[static_cast<std::size_t>(n)] += rate * atom.size_for(n);
    }
    if (!control.singular.density.empty()) {
        for (int k = 0; k < M; ++k) {
            const double mass = control.singular.density[static_cast<std::size_t>(k)] * h;
            const double rate = model.singular_cost_rate(grid.t(k));
            for (int n = 0; n < N; ++n) est.per_particle[static_cast<std::size_t>(n)] += rate * mass;
        }
    }
    for (int n = 0; n < N; ++n)
        est.per_particle[static_cast<std::size_t>(n)] +=
            model.terminal_cost.value(ensemble.x(n, M), ensemble.mu(M), ensemble.regime(n, M));

    double mean = 0.0;
    for (double j : est.per_particle) mean += j;
    mean /= static_cast<double>(N);
    double var = 0.0;
    for (double j : est.per_particle) var += (j - mean) * (j - mean);
    var /= std::max(1, N - 1);
    est.J = mean;
    est.standard_error = std::sqrt(var / static_cast<double>(N));
    return est;
}

}  // namespace mfc
