#ifndef MFC_ADJOINT_HPP
#define MFC_ADJOINT_HPP

#include <span>
#include <string>
#include <vector>

#include "mfc/forward_sim.hpp"
#include "mfc/model.hpp"

namespace mfc {

/// Per-particle, per-step first-order adjoint triple (p, q, s). q and s are
/// the step integrands; the slots at k = M hold terminal-time conventions
/// (exact values for the explicit solver, zero for the regression solvers).
struct AdjointSample {
    TimeGrid grid;
    int N = 0;
    int D = 1;
    std::vector<double> p;  // N*(M+1)
    std::vector<double> q;  // N*(M+1)
    std::vector<double> s;  // N*(M+1)*D
    std::vector<std::string> warnings;

    double p_at(int n, int k) const { return p[static_cast<std::size_t>(n) * (grid.M + 1) + k]; }
    double q_at(int n, int k) const { return q[static_cast<std::size_t>(n) * (grid.M + 1) + k]; }
    double s_at(int n, int k, int j) const {  // j 1-based
        return s[(static_cast<std::size_t>(n) * (grid.M + 1) + k) * D + (j - 1)];
    }
    std::span<const double> s_row(int n, int k) const {
        return {s.data() + (static_cast<std::size_t>(n) * (grid.M + 1) + k) * D,
                static_cast<std::size_t>(D)};
    }

    void resize(const TimeGrid& g, int n, int d);
};

/// Per-regime second-order adjoint on the grid; Q vanishes in the supported
/// class and S_j = P_j - P_i is recovered from differences.
struct SecondOrderField {
    TimeGrid grid;
    int D = 1;
    std::vector<double> capP;  // D*(M+1), capP[(i-1)*(M+1)+k]

    double P(int i, int k) const {  // i 1-based
        return capP[static_cast<std::size_t>(i - 1) * (grid.M + 1) + k];
    }
    double S(int i, int j, int k) const { return P(j, k) - P(i, k); }
};

/// Backward Riccati curve for the single-regime inter-bank class:
/// eta' = b^2 eta^2 + 2 (a + b rho) eta - (epsilon - rho^2), eta(T) = beta.
struct RiccatiSolution {
    std::vector<double> eta;     // grid values, eta[M] = beta
    double residual_norm = 0.0;  // discrete BSDE defect of the induced adjoint
};

/// Pointwise Hamiltonian f + b p + sigma q + sum_j gamma^j s_j zeta_ij.
double hamiltonian(const ModelSpec& model, const GeneratorMatrix& gen, double t, double x,
                   double y, double u, int regime, double p, double q,
                   std::span<const double> s);

/// Driver of the first-order adjoint equation at step k for every particle,
/// with the mean-field expectation terms replaced by ensemble averages:
/// H_x(n) + (E[f_y] + E[b_y p] + E[sigma_y q] + E[gamma_y s zeta]) phi'(X_n).
std::vector<double> adjoint_driver(const ModelSpec& model, const GeneratorMatrix& gen,
                                   const ParticleEnsemble& ensemble, int k,
                                   std::span<const double> p, std::span<const double> q,
                                   std::span<const double> s /* N*D */);

struct LsmcOptions {
    int threads = 1;
};

/// Least-squares Monte Carlo backward solve of the first-order adjoint BSDE:
/// conditional expectations by per-regime polynomial regression of the given
/// order, q from the martingale-residual projection on dB/h, s from the
/// regime-indexed representation differences.
AdjointSample solve_adjoint_lsmc(const ModelSpec& model, const GeneratorMatrix& gen,
                                 const ParticleEnsemble& ensemble, int basis_order = 2,
                                 const LsmcOptions& opts = {});

/// Integrates the derived Riccati terminal-value problem backward by RK4.
/// Throws NumericalError on blow-up (cannot occur when rho^2 <= epsilon and
/// beta >= 0).
RiccatiSolution solve_riccati(const InterbankParams& params, const TimeGrid& grid,
                              int substeps = 8);

struct ExplicitAdjointResult {
    AdjointSample adjoint;
    RiccatiSolution riccati;
};

/// Closed-form inter-bank adjoint for regime-independent coefficients:
/// p = -eta (X - mean X), q = -eta sigma, s = 0, with the discrete BSDE
/// residual of this candidate reported in the Riccati solution. The ensemble
/// must have been simulated under the matching maximum-principle feedback.
ExplicitAdjointResult solve_adjoint_interbank_explicit(const InterbankParams& params,
                                                       const ParticleEnsemble& ensemble);

struct VolterraSolution {
    AdjointSample adjoint;
    std::vector<double> m;  // E[a(t, alpha(t)) p(t)] on the grid
    /// Raw pathwise representation values Y[n][k] with E_t[Y] = p(t); their
    /// cross-sectional mean equals mean p exactly (regression preserves it)
    /// and their dispersion is the Monte Carlo error scale of E[p].
    std::vector<double> pathwise;  // N*(M+1)
    double residual = 0.0;
    int iterations = 0;
};

/// Regime-dependent inter-bank adjoint via the integrating-factor
/// representation: solves the discretized Volterra equation for
/// m(t) = E[a p] by fixed-point iteration, then reconstructs p by regression
/// of the pathwise conditional-expectation representation on (X, regime).
VolterraSolution solve_volterra_mean(const InterbankParams& params,
                                     const ParticleEnsemble& ensemble, int max_iterations,
                                     double tol, int basis_order = 2);

struct SecondOrderOptions {
    double det_tol = 1e-7;  // tolerance for the per-(t, regime) determinism check
    int substeps = 4;
    int threads = 1;
};

/// Solves the second-order adjoint equation for models whose linearization
/// coefficients b_x, sigma_x, gamma_x and H_xx are deterministic per
/// (t, regime) under the candidate control. The fields are extracted from
/// the ensemble (cross-sectional variance above det_tol raises
/// UnsupportedClassError), and the regime-coupled linear ODE system is
/// integrated backward by RK4. The adjoint sample is only needed when the
/// model has nonzero second derivatives of b, sigma or gamma.
SecondOrderField solve_second_order(const ModelSpec& model, const GeneratorMatrix& gen,
                                    const ParticleEnsemble& ensemble,
                                    const AdjointSample* adjoint = nullptr,
                                    const SecondOrderOptions& opts = {});

}  // namespace mfc

#endif
