#ifndef MFC_ORACLE_HPP
#define MFC_ORACLE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mfc/adjoint.hpp"
#include "mfc/forward_sim.hpp"

namespace mfc {

/// Enumerable instance for the brute-force optimality witness. Every
/// candidate atom carries its own size menu (include 0.0 to allow skipping
/// it); the enumeration guard rejects instances above max_controls.
struct CoarseInstance {
    TimeGrid grid;                                // M <= 5 by convention
    std::vector<double> control_values;           // <= 9 per step
    std::vector<double> atom_times;               // <= 3
    std::vector<std::vector<double>> atom_sizes;  // per atom, <= 4 sizes
    int N = 1000;
    std::uint64_t seed = 0;
    int initial_regime = 1;
    long long max_controls = 1000000;

    long long total_controls() const;
    void validate() const;
};

struct BruteForceRow {
    long long id = 0;
    std::vector<double> u;           // per-step open-loop values
    std::vector<double> atom_choice; // chosen size per candidate atom
    double J = 0.0;
    double SE = 0.0;
};

struct BruteForceResult {
    ControlPair best;
    long long best_id = 0;
    double J = 0.0;
    double SE = 0.0;
    std::vector<BruteForceRow> table;
    std::vector<double> best_per_particle;  // per-particle costs for CRN diffs
};

/// Exhaustive common-random-numbers evaluation of every open-loop
/// (u-sequence, atom-size) combination; returns the argmax of the estimated
/// generic criterion and the full table. Throws ValidationError with the
/// computed cardinality when the guard is exceeded.
BruteForceResult brute_force_open_loop(const ModelSpec& model, const GeneratorMatrix& gen,
                                       const CoarseInstance& instance,
                                       const SimOptions& opts = {});

struct RiccatiOracle {
    std::vector<double> eta;     // on the grid
    TimeGrid grid;
    double sigma = 0.0;

    /// Maximum-principle feedback u*(t, x, mu) = b(-eta (x - mu)) + rho (mu - x).
    FeedbackControl feedback;
    double predicted_q(int k) const {
        return -eta[static_cast<std::size_t>(k)] * sigma;
    }
};

/// Closed-form single-regime oracle: RK4 Riccati curve, the induced feedback
/// rule, and the predicted q(t) = -eta(t) sigma.
RiccatiOracle riccati_oracle(const InterbankParams& params, const TimeGrid& grid,
                             int substeps = 8);

struct ResidualReport {
    std::vector<double> per_step_rms;  // M entries
    double aggregate_rms = 0.0;        // RMS over all (particle, step) defects
};

/// Discrete backward-Euler defect of the first-order adjoint equation under
/// the supplied (p, q, s), with mean-field terms from ensemble averages:
/// r = p_{k+1} - p_k + driver_k h - q_k dB_k - sum_j s_j dPhiTilde_j.
ResidualReport bsde_residual(const ModelSpec& model, const GeneratorMatrix& gen,
                             const ParticleEnsemble& ensemble, const AdjointSample& adjoint);

}  // namespace mfc

#endif
