#ifndef MFC_FORWARD_SIM_HPP
#define MFC_FORWARD_SIM_HPP

#include <cstdint>
#include <vector>

#include "mfc/control.hpp"
#include "mfc/model.hpp"
#include "mfc/regime_chain.hpp"
#include "mfc/time_grid.hpp"

namespace mfc {

struct SimOptions {
    int threads = 1;
    int initial_regime = 1;
};

/// Driving randomness of an ensemble, precomputed so that competing controls
/// can be evaluated under common random numbers.
struct NoiseBundle {
    TimeGrid grid;
    int N = 0;
    std::uint64_t seed = 0;
    std::vector<RegimePath> regimes;              // per particle
    std::vector<int> regime_at;                   // N*(M+1), 1-based
    std::vector<double> dB;                       // N*M
    std::vector<JumpMartingaleIncrements> mart;   // per particle

    int regime(int n, int k) const {
        return regime_at[static_cast<std::size_t>(n) * (grid.M + 1) + k];
    }
    double brownian(int n, int k) const { return dB[static_cast<std::size_t>(n) * grid.M + k]; }
};

NoiseBundle make_noise(const GeneratorMatrix& gen, const TimeGrid& grid, int N,
                       std::uint64_t seed, const SimOptions& opts = {});

/// N interacting particle paths under the synchronous empirical mean-field.
struct ParticleEnsemble {
    TimeGrid grid;
    int N = 0;
    std::uint64_t seed = 0;
    std::vector<double> states;        // N*(M+1)
    std::vector<int> regime_at;        // N*(M+1)
    std::vector<double> dB;            // N*M
    std::vector<RegimePath> regimes;   // per particle (exact jump lists)
    std::vector<JumpMartingaleIncrements> mart;  // per particle
    std::vector<double> mean_field;    // mu[k] = (1/N) sum phi(X[n][k]), size M+1
    std::vector<double> applied_u;     // N*M
    std::vector<double> applied_dxi;   // N*M (step-assigned xi increments)

    double x(int n, int k) const { return states[static_cast<std::size_t>(n) * (grid.M + 1) + k]; }
    int regime(int n, int k) const {
        return regime_at[static_cast<std::size_t>(n) * (grid.M + 1) + k];
    }
    double u(int n, int k) const { return applied_u[static_cast<std::size_t>(n) * grid.M + k]; }
    double dxi(int n, int k) const { return applied_dxi[static_cast<std::size_t>(n) * grid.M + k]; }
    double brownian(int n, int k) const { return dB[static_cast<std::size_t>(n) * grid.M + k]; }
    double mu(int k) const { return mean_field[static_cast<std::size_t>(k)]; }
};

/// Euler scheme for the controlled mean-field state equation. The empirical
/// mean is recomputed serially before every step, so results are identical
/// for any thread count. Throws NumericalError naming the particle and step
/// on a non-finite state.
ParticleEnsemble simulate(const ModelSpec& model, const GeneratorMatrix& gen,
                          const ControlPair& control, const TimeGrid& grid, int N,
                          std::uint64_t seed, const SimOptions& opts = {});

/// Same scheme over a precomputed noise bundle (common random numbers).
ParticleEnsemble simulate_with_noise(const ModelSpec& model, const NoiseBundle& noise,
                                     const ControlPair& control, const SimOptions& opts = {});

struct CostEstimate {
    double J = 0.0;
    double standard_error = 0.0;
    std::vector<double> per_particle;
};

/// Monte Carlo estimate of the generic criterion
/// J = E[ sum_k f h + sum_atoms kappa dxi + h(X_M) ].
CostEstimate estimate_cost(const ModelSpec& model, const ParticleEnsemble& ensemble,
                           const ControlPair& control);

}  // namespace mfc

#endif
