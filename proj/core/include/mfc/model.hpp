#ifndef MFC_MODEL_HPP
#define MFC_MODEL_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfc/errors.hpp"
#include "mfc/regime_chain.hpp"

namespace mfc {

/// Scalar coefficient of (t, x, y, u, regime) with the analytic partials the
/// adjoint equations need. Unset derivative slots default to zero.
struct Coefficient {
    using Fn = std::function<double(double t, double x, double y, double u, int regime)>;
    Fn value, dx, dy, du, dxx, dxy, dyy;

    static Coefficient zero();
    static Coefficient constant(double c);

    double v(double t, double x, double y, double u, int i) const { return value(t, x, y, u, i); }
};

/// Component-indexed jump coefficient; the last argument is the target state j
/// (1-based) of the compensated jump martingale it multiplies.
struct VectorCoefficient {
    using Fn = std::function<double(double t, double x, double y, double u, int regime, int j)>;
    Fn value, dx, dy, du, dxx, dxy, dyy;

    static VectorCoefficient zero();
};

/// Terminal cost h(x, y, regime) with partials.
struct TerminalCost {
    using Fn = std::function<double(double x, double y, int regime)>;
    Fn value, dx, dy, dxx, dxy, dyy;

    static TerminalCost zero();
};

struct ControlInterval {
    double lo = -1.0;
    double hi = 1.0;

    double clamp(double u) const { return u < lo ? lo : (u > hi ? hi : u); }
    bool contains(double u) const { return u >= lo && u <= hi; }
    /// Uniform scan grid with n >= 2 points (used for argmax checks).
    std::vector<double> grid(int n) const;
};

/// Coefficient bundle of the control problem in the maximization convention:
/// maximize E[ int f dt + int kappa dxi + h(X_T) ].
struct ModelSpec {
    Coefficient drift;            // b(t, x, y, u, regime)
    Coefficient diffusion;        // sigma(t, x, y, u, regime)
    VectorCoefficient jump;       // gamma^j(t, x, y, u, regime)
    bool has_jump = false;        // false lets hot loops skip the jump terms

    std::function<double(double t, int regime)> singular;  // G(t, regime)
    Coefficient running_cost;                              // f(t, x, y, u, regime)
    std::function<double(double t)> singular_cost_rate;    // kappa(t)
    TerminalCost terminal_cost;                            // h(x, y, regime)

    std::function<double(double x)> mean_map;     // phi
    std::function<double(double x)> mean_map_dx;  // phi'

    double x0 = 0.0;
    double T = 1.0;
    ControlInterval control_set;  // A1
    int regimes = 1;              // D expected by gamma and the chain

    std::string name = "custom";

    /// Skeleton with every coefficient zero and phi = identity.
    static ModelSpec empty(int regimes = 1);
};

/// Parameters of the built-in inter-bank borrowing/lending model with
/// transaction costs; the per-regime vectors must match the generator size.
struct InterbankParams {
    std::vector<double> a;  // mean-reversion toward the ensemble average
    std::vector<double> b;  // control gain
    std::vector<double> c;  // transaction (singular) coefficient
    double sigma = 0.1;
    double rho = 0.0;      // lending/borrowing incentive
    double epsilon = 1.0;  // running penalty
    double beta = 1.0;     // terminal penalty
    double kappa = 1.0;    // transaction cost rate
    double x0 = 1.0;
    double T = 1.0;
    double u_lo = -5.0;
    double u_hi = 5.0;
    GeneratorMatrix generator = GeneratorMatrix::single_state();

    int regimes() const { return generator.dim; }
    bool regime_independent() const;
    /// Throws ValidationError; in particular rho^2 <= epsilon must hold.
    void validate() const;
};

/// Builds the maximization-form ModelSpec for the inter-bank application:
/// the application's minimization costs enter with flipped signs, the
/// singular coefficient is G = -c and the generic rate is kappa_gen = -kappa,
/// so the generic criterion reproduces the negated application cost.
ModelSpec interbank_model(const InterbankParams& params);

struct ModelValidationReport {
    struct Entry {
        std::string coefficient;
        double max_rel_error = 0.0;
        double worst_t = 0.0, worst_x = 0.0, worst_y = 0.0, worst_u = 0.0;
        int worst_regime = 1;
        bool pass = true;
    };
    std::vector<Entry> entries;
    bool pass = true;

    std::string summary() const;
};

struct ValidationBox {
    double x_lo = -2.0, x_hi = 2.0;
    double y_lo = -2.0, y_hi = 2.0;
};

/// Checks analytic derivatives against central finite differences on random
/// points and the jump coefficient's dimension. Throws nothing; inspect
/// report.pass.
ModelValidationReport validate_model(const ModelSpec& model, int samples, std::uint64_t seed,
                                     double tol = 1e-6, const ValidationBox& box = {});

}  // namespace mfc

#endif
