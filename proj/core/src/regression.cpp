#include "mfc/regression.hpp"

#include <algorithm>
#include <cmath>

namespace mfc {

namespace {

// Gaussian elimination with partial pivoting; returns false on a pivot too
// small for the system scale (rank deficiency).
bool solve_normal(std::vector<double>& A, std::vector<double>& b, int n) {
    double scale = 0.0;
    for (int i = 0; i < n * n; ++i) scale = std::max(scale, std::abs(A[static_cast<std::size_t>(i)]));
    const double tol = 1e-12 * std::max(1.0, scale);
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(A[static_cast<std::size_t>(r) * n + col]) >
                std::abs(A[static_cast<std::size_t>(pivot) * n + col]))
                pivot = r;
        if (std::abs(A[static_cast<std::size_t>(pivot) * n + col]) <= tol) return false;
        if (pivot != col) {
            for (int c = 0; c < n; ++c)
                std::swap(A[static_cast<std::size_t>(col) * n + c],
                          A[static_cast<std::size_t>(pivot) * n + c]);
            std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(pivot)]);
        }
        const double d = A[static_cast<std::size_t>(col) * n + col];
        for (int r = col + 1; r < n; ++r) {
            const double factor = A[static_cast<std::size_t>(r) * n + col] / d;
            if (factor == 0.0) continue;
            for (int c = col; c < n; ++c)
                A[static_cast<std::size_t>(r) * n + c] -=
                    factor * A[static_cast<std::size_t>(col) * n + c];
            b[static_cast<std::size_t>(r)] -= factor * b[static_cast<std::size_t>(col)];
        }
    }
    for (int r = n - 1; r >= 0; --r) {
        double acc = b[static_cast<std::size_t>(r)];
        for (int c = r + 1; c < n; ++c)
            acc -= A[static_cast<std::size_t>(r) * n + c] * b[static_cast<std::size_t>(c)];
        b[static_cast<std::size_t>(r)] = acc / A[static_cast<std::size_t>(r) * n + r];
    }
    return true;
}

PolyFit fit_poly_indexed(std::span<const double> xs, std::span<const double> ys,
                         std::span<const std::size_t> idx, int order) {
    PolyFit fit;
    const std::size_t n = idx.size();
    if (n == 0) return fit;

    double mean = 0.0, lo = xs[idx[0]], hi = xs[idx[0]];
    for (std::size_t i : idx) {
        mean += xs[i];
        lo = std::min(lo, xs[i]);
        hi = std::max(hi, xs[i]);
    }
    mean /= static_cast<double>(n);
    fit.center = mean;
    fit.scale = std::max(0.5 * (hi - lo), 1e-12);

    int ord = std::min<int>(order, static_cast<int>(n) - 1);
    ord = std::max(ord, 0);
    if (ord < order) fit.degraded = true;

    while (true) {
        const int m = ord + 1;
        std::vector<double> A(static_cast<std::size_t>(m) * m, 0.0);
        std::vector<double> rhs(static_cast<std::size_t>(m), 0.0);
        std::vector<double> pow_z(static_cast<std::size_t>(2 * ord) + 1, 0.0);
        // accumulate moments in a fixed particle order
        for (std::size_t i : idx) {
            const double z = (xs[i] - fit.center) / fit.scale;
            double zp = 1.0;
            for (int d = 0; d <= 2 * ord; ++d) {
                pow_z[static_cast<std::size_t>(d)] = zp;
                zp *= z;
            }
            for (int r = 0; r < m; ++r) {
                rhs[static_cast<std::size_t>(r)] += pow_z[static_cast<std::size_t>(r)] * ys[i];
                for (int c = 0; c <= r; ++c)
                    A[static_cast<std::size_t>(r) * m + c] +=
                        pow_z[static_cast<std::size_t>(r + c)];
            }
        }
        for (int r = 0; r < m; ++r)
            for (int c = r + 1; c < m; ++c)
                A[static_cast<std::size_t>(r) * m + c] = A[static_cast<std::size_t>(c) * m + r];

        std::vector<double> Acopy = A, sol = rhs;
        if (solve_normal(Acopy, sol, m)) {
            fit.order = ord;
            fit.coef = std::move(sol);
            fit.ok = true;
            return fit;
        }
        if (ord == 0) {
            // constant fit is always solvable unless n == 0
            fit.order = 0;
            fit.coef = {rhs[0] / static_cast<double>(n)};
            fit.ok = true;
            fit.degraded = true;
            return fit;
        }
        --ord;
        fit.degraded = true;
    }
}

}  // namespace

PolyFit fit_poly(std::span<const double> xs, std::span<const double> ys, int order) {
    std::vector<std::size_t> idx(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) idx[i] = i;
    return fit_poly_indexed(xs, ys, idx, order);
}

RegimeRegression fit_regime_regression(std::span<const double> xs, std::span<const int> regimes,
                                       std::span<const double> ys, int dim, int order) {
    RegimeRegression reg;
    reg.dim = dim;
    reg.per_regime.resize(static_cast<std::size_t>(dim));

    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(dim));
    for (std::size_t n = 0; n < xs.size(); ++n)
        buckets[static_cast<std::size_t>(regimes[n] - 1)].push_back(n);

    for (int i = 0; i < dim; ++i) {
        reg.per_regime[static_cast<std::size_t>(i)] =
            fit_poly_indexed(xs, ys, buckets[static_cast<std::size_t>(i)], order);
        reg.degraded = reg.degraded || reg.per_regime[static_cast<std::size_t>(i)].degraded;
    }
    if (dim > 1) {
        reg.pooled = fit_poly(xs, ys, order);
    } else {
        reg.pooled = reg.per_regime[0];
    }
    return reg;
}

}  // namespace mfc
