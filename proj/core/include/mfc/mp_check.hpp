#ifndef MFC_MP_CHECK_HPP
#define MFC_MP_CHECK_HPP

#include <string>
#include <vector>

#include "mfc/adjoint.hpp"
#include "mfc/forward_sim.hpp"
#include "mfc/oracle.hpp"

namespace mfc {

/// Coefficient differences between a spiked control value and the candidate:
/// delta b, delta sigma, delta gamma^j; identically zero at u = u*.
struct SpikeDifference {
    double db = 0.0;
    double dsigma = 0.0;
    std::vector<double> dgamma;
};

SpikeDifference spike_difference(const ModelSpec& model, double t, double x, double y,
                                 double u_spike, double u_star, int regime, int dim);

/// Quantified evidence for one maximum-principle condition. `max_violation`
/// is the raw worst value (possibly negative for max-based conditions);
/// `violating_fraction` counts (particle, step) pairs above `tol`. Pass
/// semantics: max-based conditions need max_violation <= tol, probability
/// conditions need violating_fraction <= frac_cap; both are monotone in the
/// thresholds.
struct CheckReport {
    std::string condition;
    double max_violation = 0.0;
    double violating_fraction = 0.0;
    double tol = 0.0;
    double frac_cap = 0.0;
    bool pass = false;

    struct Offender {
        int particle = 0;
        int step = 0;
        double u = 0.0;
        double value = 0.0;
    };
    std::vector<Offender> worst;

    std::string to_json() const;
    std::string to_line() const;
};

struct CheckOptions {
    double tol = 1e-6;
    double frac_cap = -1.0;  // < 0 means the default 1/sqrt(N)
    int threads = 1;
    /// When true the control grid is interpreted as offsets added to the
    /// candidate value at each (particle, step) instead of absolute values.
    bool grid_is_offsets = false;
    int max_offenders = 5;
};

/// Necessary-condition variational inequality: reports the maximum over
/// (particle, step, grid u) of
///   H(u) - H(u*) + P (dsigma)^2 / 2 + sum_j (P + S_j)(dgamma^j)^2 zeta_ij / 2.
CheckReport check_variational_inequality(const ModelSpec& model, const GeneratorMatrix& gen,
                                         const ParticleEnsemble& ensemble,
                                         const AdjointSample& adjoint,
                                         const SecondOrderField& second,
                                         const std::vector<double>& control_grid,
                                         const CheckOptions& opts = {});

struct SingularCheckReports {
    CheckReport nonpositivity;     // kappa + G p <= 0 everywhere (fraction above tol)
    CheckReport complementarity;   // xi mass carried where kappa + G p < -tol
    bool pass = false;
};

SingularCheckReports check_singular_conditions(const ModelSpec& model,
                                               const ParticleEnsemble& ensemble,
                                               const AdjointSample& adjoint,
                                               const SingularControl& singular,
                                               const CheckOptions& opts = {});

struct ConcavityOptions {
    int samples = 200;
    double fd_step = 1e-3;
    std::uint64_t seed = 2024;
    double box_inflate = 0.5;  // sample box = data range inflated by this factor
};

struct SufficientReport {
    CheckReport concavity_hamiltonian;
    CheckReport concavity_terminal;
    CheckReport maximum_condition;
    SingularCheckReports singular;
    bool pass = false;

    std::vector<const CheckReport*> all() const {
        return {&concavity_hamiltonian, &concavity_terminal, &maximum_condition,
                &singular.nonpositivity, &singular.complementarity};
    }
};

/// Sufficient-condition suite: sampled concavity of H in (x, y, u) and of h
/// in (x, y) (largest second-difference Hessian eigenvalue <= tol), the
/// Hamiltonian maximum condition |argmax_grid H - u*| <= pitch + tol, and the
/// singular complementarity conditions. Requires a convex A1, which the
/// interval representation guarantees.
SufficientReport check_sufficient(const ModelSpec& model, const GeneratorMatrix& gen,
                                  const ParticleEnsemble& ensemble,
                                  const AdjointSample& adjoint,
                                  const SingularControl& singular,
                                  const std::vector<double>& control_grid,
                                  const CheckOptions& opts = {},
                                  const ConcavityOptions& copts = {});

struct CostComparison {
    struct Row {
        std::string label;
        double J = 0.0;
        double SE = 0.0;
        double diff = 0.0;      // J - J(candidate), paired per particle
        double diff_se = 0.0;   // standard error of the paired difference
        bool flagged = false;   // beats the candidate by more than 2 paired SEs
    };
    Row candidate;
    std::vector<Row> rows;
    bool any_flagged = false;
};

/// Common-random-numbers cost table for the candidate against a list of
/// perturbations; flags any perturbation whose paired cost difference
/// exceeds two standard errors.
CostComparison compare_costs(const ModelSpec& model, const GeneratorMatrix& gen,
                             const TimeGrid& grid, int N, std::uint64_t seed,
                             const ControlPair& candidate,
                             const std::vector<ControlPair>& perturbations,
                             const std::vector<std::string>& labels = {},
                             const SimOptions& opts = {});

/// Largest eigenvalue of a dense symmetric n x n matrix (n <= 4) by Jacobi
/// sweeps; used by the sampled concavity check.
double max_eigenvalue_sym(std::vector<double> A, int n);

}  // namespace mfc

#endif
