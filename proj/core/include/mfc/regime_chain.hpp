#ifndef MFC_REGIME_CHAIN_HPP
#define MFC_REGIME_CHAIN_HPP

#include <cstdint>
#include <vector>

#include "mfc/errors.hpp"
#include "mfc/rng.hpp"
#include "mfc/time_grid.hpp"

namespace mfc {

/// Rate (Q-)matrix of the continuous-time Markov chain. Off-diagonal entries
/// are strictly positive, rows sum to zero, diagonal entries are strictly
/// negative (except for the degenerate single-state chain [0]).
struct GeneratorMatrix {
    int dim = 1;
    std::vector<double> rates;  // dim*dim, row-major

    double rate(int i, int j) const { return rates[static_cast<std::size_t>(i) * dim + j]; }

    /// Throws ValidationError on sign or row-sum violations.
    void validate() const;

    static GeneratorMatrix single_state() { return GeneratorMatrix{1, {0.0}}; }

    static GeneratorMatrix two_state(double rate12, double rate21) {
        return GeneratorMatrix{2, {-rate12, rate12, rate21, -rate21}};
    }
};

struct RegimeJump {
    double time = 0.0;
    int from = 1;  // 1-based states
    int to = 1;
};

/// Piecewise-constant cadlag chain path. regime_index[k] holds the state at
/// grid time t_k with the left-limit convention at exact jump times.
struct RegimePath {
    TimeGrid grid;
    std::vector<int> regime_index;   // size M+1, 1-based
    std::vector<RegimeJump> jumps;   // exact times, strictly increasing

    int initial_state() const { return regime_index.empty() ? 1 : regime_index.front(); }
};

/// Per-step jump counts, compensator mass and compensated (martingale)
/// increments for each target state j: count = mart + comp.
struct JumpMartingaleIncrements {
    int dim = 1;
    int steps = 0;
    std::vector<double> d_count;  // steps*dim: jumps into e_j during (t_k, t_{k+1}]
    std::vector<double> d_comp;   // steps*dim: exact compensator mass

    double count(int k, int j) const { return d_count[static_cast<std::size_t>(k) * dim + j]; }
    double comp(int k, int j) const { return d_comp[static_cast<std::size_t>(k) * dim + j]; }
    double mart(int k, int j) const { return count(k, j) - comp(k, j); }
};

/// Exact simulation: exponential holding times, embedded-chain transitions,
/// jump times kept exact and only then restricted to the grid.
RegimePath sample_regime_path(const GeneratorMatrix& gen, int initial, const TimeGrid& grid,
                              RngStream& rng);

/// Convenience overload keyed on (seed, particle) with the chain channel.
RegimePath sample_regime_path(const GeneratorMatrix& gen, int initial, const TimeGrid& grid,
                              std::uint64_t seed, std::uint64_t particle);

/// Exact per-step occupation times of each state inside (t_k, t_{k+1}].
std::vector<double> occupation_times(const RegimePath& path, int step, int dim);

JumpMartingaleIncrements compensated_increments(const RegimePath& path,
                                                const GeneratorMatrix& gen);

}  // namespace mfc

#endif
