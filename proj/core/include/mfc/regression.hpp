#ifndef MFC_REGRESSION_HPP
#define MFC_REGRESSION_HPP

#include <span>
#include <string>
#include <vector>

namespace mfc {

/// Least-squares polynomial fit in one variable, normalized internally for
/// conditioning. Falls back to lower orders when the normal equations are
/// rank deficient.
struct PolyFit {
    int order = 0;
    double center = 0.0;
    double scale = 1.0;
    std::vector<double> coef;
    bool ok = false;
    bool degraded = false;

    double eval(double x) const {
        if (!ok) return 0.0;
        const double z = (x - center) / scale;
        double acc = 0.0;
        for (std::size_t i = coef.size(); i-- > 0;) acc = acc * z + coef[i];
        return acc;
    }
};

PolyFit fit_poly(std::span<const double> xs, std::span<const double> ys, int order);

/// Per-regime polynomial conditional-expectation estimator: basis
/// {1, x, ..., x^order} x regime indicators (equivalently one OLS per
/// regime). Regimes without enough points fall back to the pooled fit.
struct RegimeRegression {
    int dim = 1;
    std::vector<PolyFit> per_regime;  // dim entries
    PolyFit pooled;
    bool degraded = false;

    /// Fitted value at (x, regime); regime is 1-based.
    double eval(double x, int regime) const {
        const PolyFit& f = per_regime[static_cast<std::size_t>(regime - 1)];
        return f.ok ? f.eval(x) : pooled.eval(x);
    }
    bool regime_fitted(int regime) const {
        return per_regime[static_cast<std::size_t>(regime - 1)].ok;
    }
};

RegimeRegression fit_regime_regression(std::span<const double> xs, std::span<const int> regimes,
                                       std::span<const double> ys, int dim, int order);

/// OLS preserves the sample mean of the response exactly when the basis
/// contains the constant; callers rely on this for the E[p] = 0 identity.
}  // namespace mfc

#endif
