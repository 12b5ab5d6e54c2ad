#include "mfc/adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfc/regression.hpp"
#include "mfc/threading.hpp"

namespace mfc {

void AdjointSample::resize(const TimeGrid& g, int n, int d) {
    grid = g;
    N = n;
    D = d;
    const std::size_t rows = static_cast<std::size_t>(n) * (g.M + 1);
    p.assign(rows, 0.0);
    q.assign(rows, 0.0);
    s.assign(rows * static_cast<std::size_t>(d), 0.0);
}

double hamiltonian(const ModelSpec& model, const GeneratorMatrix& gen, double t, double x,
                   double y, double u, int regime, double p, double q,
                   std::span<const double> s) {
    double H = model.running_cost.value(t, x, y, u, regime) +
               model.drift.value(t, x, y, u, regime) * p +
               model.diffusion.value(t, x, y, u, regime) * q;
    if (model.has_jump) {
        for (int j = 1; j <= gen.dim; ++j)
            H += model.jump.value(t, x, y, u, regime, j) * s[static_cast<std::size_t>(j - 1)] *
                 gen.rate(regime - 1, j - 1);
    }
    return H;
}

std::vector<double> adjoint_driver(const ModelSpec& model, const GeneratorMatrix& gen,
                                   const ParticleEnsemble& ens, int k,
                                   std::span<const double> p, std::span<const double> q,
                                   std::span<const double> s) {
    const int N = ens.N;
    const int D = gen.dim;
    const double t = ens.grid.t(k);
    const double mu = ens.mu(k);

    double mean_fy = 0.0, mean_byp = 0.0, mean_syq = 0.0, mean_gys = 0.0;
    for (int n = 0; n < N; ++n) {
        const double x = ens.x(n, k);
        const double u = ens.u(n, k);
        const int i = ens.regime(n, k);
        mean_fy += model.running_cost.dy(t, x, mu, u, i);
        mean_byp += model.drift.dy(t, x, mu, u, i) * p[static_cast<std::size_t>(n)];
        mean_syq += model.diffusion.dy(t, x, mu, u, i) * q[static_cast<std::size_t>(n)];
        if (model.has_jump) {
            for (int j = 1; j <= D; ++j)
                mean_gys += model.jump.dy(t, x, mu, u, i, j) *
                            s[static_cast<std::size_t>(n) * D + (j - 1)] *
                            gen.rate(i - 1, j - 1);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(N);
    const double mean_field_term = (mean_fy + mean_byp + mean_syq + mean_gys) * inv_n;

    std::vector<double> driver(static_cast<std::size_t>(N), 0.0);
    for (int n = 0; n < N; ++n) {
        const double x = ens.x(n, k);
        const double u = ens.u(n, k);
        const int i = ens.regime(n, k);
        double Hx = model.running_cost.dx(t, x, mu, u, i) +
                    model.drift.dx(t, x, mu, u, i) * p[static_cast<std::size_t>(n)] +
                    model.diffusion.dx(t, x, mu, u, i) * q[static_cast<std::size_t>(n)];
        if (model.has_jump) {
            for (int j = 1; j <= D; ++j)
                Hx += model.jump.dx(t, x, mu, u, i, j) *
                      s[static_cast<std::size_t>(n) * D + (j - 1)] * gen.rate(i - 1, j - 1);
        }
        driver[static_cast<std::size_t>(n)] = Hx + mean_field_term * model.mean_map_dx(x);
    }
    return driver;
}

namespace {

void fill_terminal(const ModelSpec& model, const ParticleEnsemble& ens, AdjointSample& adj) {
    const int N = ens.N;
    const int M = ens.grid.M;
    const double muM = ens.mu(M);
    double mean_hy = 0.0;
    for (int n = 0; n < N; ++n)
        mean_hy += model.terminal_cost.dy(ens.x(n, M), muM, ens.regime(n, M));
    mean_hy /= static_cast<double>(N);
    for (int n = 0; n < N; ++n) {
        const double x = ens.x(n, M);
        adj.p[static_cast<std::size_t>(n) * (M + 1) + M] =
            model.terminal_cost.dx(x, muM, ens.regime(n, M)) + mean_hy * model.mean_map_dx(x);
    }
}

}  // namespace

AdjointSample solve_adjoint_lsmc(const ModelSpec& model, const GeneratorMatrix& gen,
                                 const ParticleEnsemble& ens, int basis_order,
                                 const LsmcOptions& opts) {
    if (gen.dim != model.regimes)
        throw ValidationError("solve_adjoint_lsmc: generator/model dimension mismatch");
    const int N = ens.N;
    const int M = ens.grid.M;
    const int D = gen.dim;
    const double h = ens.grid.h;

    AdjointSample adj;
    adj.resize(ens.grid, N, D);
    fill_terminal(model, ens, adj);

    std::vector<double> xs(static_cast<std::size_t>(N));
    std::vector<int> regs(static_cast<std::size_t>(N));
    std::vector<double> next_p(static_cast<std::size_t>(N));
    std::vector<double> cond_p(static_cast<std::size_t>(N));
    std::vector<double> q_resp(static_cast<std::size_t>(N));
    std::vector<double> qk(static_cast<std::size_t>(N));
    std::vector<double> sk(static_cast<std::size_t>(N) * D, 0.0);

    for (int k = M - 1; k >= 0; --k) {
        for (int n = 0; n < N; ++n) {
            xs[static_cast<std::size_t>(n)] = ens.x(n, k);
            regs[static_cast<std::size_t>(n)] = ens.regime(n, k);
            next_p[static_cast<std::size_t>(n)] = adj.p_at(n, k + 1);
        }
        const RegimeRegression psi = fit_regime_regression(xs, regs, next_p, D, basis_order);
        if (psi.degraded) {
            std::ostringstream w;
            w << "lsmc: basis degraded at step " << k;
            adj.warnings.push_back(w.str());
        }

        for (int n = 0; n < N; ++n)
            cond_p[static_cast<std::size_t>(n)] =
                psi.eval(xs[static_cast<std::size_t>(n)], regs[static_cast<std::size_t>(n)]);

        // q: martingale residual projected on dB/h
        for (int n = 0; n < N; ++n)
            q_resp[static_cast<std::size_t>(n)] =
                (next_p[static_cast<std::size_t>(n)] - cond_p[static_cast<std::size_t>(n)]) *
                ens.brownian(n, k) / h;
        const RegimeRegression qfit = fit_regime_regression(xs, regs, q_resp, D, basis_order);
        for (int n = 0; n < N; ++n)
            qk[static_cast<std::size_t>(n)] =
                qfit.eval(xs[static_cast<std::size_t>(n)], regs[static_cast<std::size_t>(n)]);

        // s_j: regime-indexed representation differences psi(e_j) - psi(e_i)
        std::fill(sk.begin(), sk.end(), 0.0);
        if (D > 1) {
            for (int n = 0; n < N; ++n) {
                const int i = regs[static_cast<std::size_t>(n)];
                for (int j = 1; j <= D; ++j) {
                    if (j == i || !psi.regime_fitted(j) || !psi.regime_fitted(i)) continue;
                    sk[static_cast<std::size_t>(n) * D + (j - 1)] =
                        psi.eval(xs[static_cast<std::size_t>(n)], j) -
                        psi.eval(xs[static_cast<std::size_t>(n)], i);
                }
            }
        }

        const std::vector<double> driver = adjoint_driver(model, gen, ens, k, cond_p, qk, sk);
        for (int n = 0; n < N; ++n) {
            const std::size_t row = static_cast<std::size_t>(n) * (M + 1) + k;
            adj.p[row] = cond_p[static_cast<std::size_t>(n)] +
                         h * driver[static_cast<std::size_t>(n)];
            if (!std::isfinite(adj.p[row]))
                throw NumericalError("solve_adjoint_lsmc: non-finite p value");
            adj.q[row] = qk[static_cast<std::size_t>(n)];
            for (int j = 0; j < D; ++j)
                adj.s[row * D + static_cast<std::size_t>(j)] =
                    sk[static_cast<std::size_t>(n) * D + static_cast<std::size_t>(j)];
        }
    }
    return adj;
}

RiccatiSolution solve_riccati(const InterbankParams& params, const TimeGrid& grid,
                              int substeps) {
    params.validate();
    if (!params.regime_independent())
        throw UnsupportedClassError(
            "solve_riccati: regime-dependent coefficients; use solve_volterra_mean");
    const double a = params.a[0];
    const double b = params.b[0];
    const double rho = params.rho;
    const double eps = params.epsilon;

    auto rhs = [&](double eta) {
        return b * b * eta * eta + 2.0 * (a + b * rho) * eta - (eps - rho * rho);
    };

    RiccatiSolution sol;
    sol.eta.assign(static_cast<std::size_t>(grid.M) + 1, 0.0);
    sol.eta[static_cast<std::size_t>(grid.M)] = params.beta;
    const double dt = -grid.h / static_cast<double>(std::max(1, substeps));
    for (int k = grid.M; k > 0; --k) {
        double eta = sol.eta[static_cast<std::size_t>(k)];
        for (int s = 0; s < std::max(1, substeps); ++s) {
            const double k1 = rhs(eta);
            const double k2 = rhs(eta + 0.5 * dt * k1);
            const double k3 = rhs(eta + 0.5 * dt * k2);
            const double k4 = rhs(eta + dt * k3);
            eta += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!std::isfinite(eta) || std::abs(eta) > 1e8)
                throw NumericalError("solve_riccati: blow-up detected");
        }
        sol.eta[static_cast<std::size_t>(k - 1)] = eta;
    }
    return sol;
}

ExplicitAdjointResult solve_adjoint_interbank_explicit(const InterbankParams& params,
                                                       const ParticleEnsemble& ens) {
    if (!params.regime_independent())
        throw UnsupportedClassError(
            "solve_adjoint_interbank_explicit: regime-dependent coefficients; "
            "use solve_volterra_mean");
    const int N = ens.N;
    const int M = ens.grid.M;

    ExplicitAdjointResult result;
    result.riccati = solve_riccati(params, ens.grid);
    result.adjoint.resize(ens.grid, N, params.regimes());

    for (int k = 0; k <= M; ++k) {
        double mean_x = 0.0;
        for (int n = 0; n < N; ++n) mean_x += ens.x(n, k);
        mean_x /= static_cast<double>(N);
        const double eta = result.riccati.eta[static_cast<std::size_t>(k)];
        for (int n = 0; n < N; ++n) {
            const std::size_t row = static_cast<std::size_t>(n) * (M + 1) + k;
            result.adjoint.p[row] = -eta * (ens.x(n, k) - mean_x);
            result.adjoint.q[row] = -eta * params.sigma;
        }
    }

    // discrete BSDE defect of this candidate (reported, not enforced)
    const ModelSpec model = interbank_model(params);
    double acc = 0.0;
    std::size_t count = 0;
    std::vector<double> sk(static_cast<std::size_t>(N) * params.regimes(), 0.0);
    std::vector<double> pk(static_cast<std::size_t>(N)), qk(static_cast<std::size_t>(N));
    for (int k = 0; k < M; ++k) {
        for (int n = 0; n < N; ++n) {
            pk[static_cast<std::size_t>(n)] = result.adjoint.p_at(n, k);
            qk[static_cast<std::size_t>(n)] = result.adjoint.q_at(n, k);
        }
        const std::vector<double> driver =
            adjoint_driver(model, params.generator, ens, k, pk, qk, sk);
        for (int n = 0; n < N; ++n) {
            double r = result.adjoint.p_at(n, k + 1) - result.adjoint.p_at(n, k) +
                       driver[static_cast<std::size_t>(n)] * ens.grid.h -
                       result.adjoint.q_at(n, k) * ens.brownian(n, k);
            const auto& inc = ens.mart[static_cast<std::size_t>(n)];
            for (int j = 1; j <= params.regimes(); ++j)
                r -= result.adjoint.s_at(n, k, j) * inc.mart(k, j - 1);
            acc += r * r;
            ++count;
        }
    }
    result.riccati.residual_norm = std::sqrt(acc / static_cast<double>(count));
    return result;
}

VolterraSolution solve_volterra_mean(const InterbankParams& params,
                                     const ParticleEnsemble& ens, int max_iterations,
                                     double tol, int basis_order) {
    params.validate();
    const int N = ens.N;
    const int M = ens.grid.M;
    const int D = params.regimes();
    const double h = ens.grid.h;
    const double rho = params.rho;
    const double eps = params.epsilon;
    const double beta = params.beta;

    // cumulative integrated mean-reversion rate per particle, from exact
    // occupation times: Abar[n][k] = int_0^{t_k} a(s, alpha_n(s)) ds
    std::vector<double> abar(static_cast<std::size_t>(N) * (M + 1), 0.0);
    for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        for (int k = 0; k < M; ++k) {
            const std::vector<double> occ =
                occupation_times(ens.regimes[static_cast<std::size_t>(n)], k, D);
            double step_int = 0.0;
            for (int i = 0; i < D; ++i) step_int += params.a[static_cast<std::size_t>(i)] * occ[static_cast<std::size_t>(i)];
            acc += step_int;
            abar[static_cast<std::size_t>(n) * (M + 1) + k + 1] = acc;
        }
    }

    // W[n][k] = a(t_k, alpha_n(t_k)) exp(Abar_k), V[n][l] = exp(-Abar_l),
    // so a(t_k) G_n(t_k -> t_l) = W[n][k] V[n][l]
    std::vector<double> W(static_cast<std::size_t>(N) * (M + 1));
    std::vector<double> V(static_cast<std::size_t>(N) * (M + 1));
    for (int n = 0; n < N; ++n) {
        for (int k = 0; k <= M; ++k) {
            const std::size_t idx = static_cast<std::size_t>(n) * (M + 1) + k;
            const double a_nk = params.a[static_cast<std::size_t>(ens.regime(n, k) - 1)];
            W[idx] = a_nk * std::exp(abar[idx]);
            V[idx] = std::exp(-abar[idx]);
        }
    }

    std::vector<double> u_mean(static_cast<std::size_t>(M), 0.0);
    for (int k = 0; k < M; ++k) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) acc += ens.u(n, k);
        u_mean[static_cast<std::size_t>(k)] = acc / static_cast<double>(N);
    }

    // forcing F_k and kernel K(k, l) of the Volterra equation
    //   m(t) = -beta Cov(a_t G_t^T, X_T)
    //          - int_t^T [rho Cov(a_t G_t^r, u_r) + eps Cov(a_t G_t^r, X_r)
    //                     - m(r) E[a_t G_t^r]] dr
    const double inv_n = 1.0 / static_cast<double>(N);
    std::vector<double> F(static_cast<std::size_t>(M) + 1, 0.0);
    std::vector<double> K(static_cast<std::size_t>(M + 1) * (M + 1), 0.0);
    for (int k = 0; k <= M; ++k) {
        // terminal covariance term
        double mean_wv = 0.0, mean_wvx = 0.0, mean_x = 0.0;
        for (int n = 0; n < N; ++n) {
            const double wv = W[static_cast<std::size_t>(n) * (M + 1) + k] *
                              V[static_cast<std::size_t>(n) * (M + 1) + M];
            mean_wv += wv;
            mean_wvx += wv * ens.x(n, M);
            mean_x += ens.x(n, M);
        }
        mean_wv *= inv_n;
        mean_wvx *= inv_n;
        mean_x *= inv_n;
        F[static_cast<std::size_t>(k)] = -beta * (mean_wvx - mean_wv * mean_x);

        for (int l = k; l <= M; ++l) {
            double kc = 0.0, cu = 0.0, cx = 0.0, mx = 0.0, mu_ = 0.0;
            for (int n = 0; n < N; ++n) {
                const double wv = W[static_cast<std::size_t>(n) * (M + 1) + k] *
                                  V[static_cast<std::size_t>(n) * (M + 1) + l];
                kc += wv;
                cx += wv * ens.x(n, l);
                mx += ens.x(n, l);
                if (l < M) {
                    cu += wv * ens.u(n, l);
                    mu_ += ens.u(n, l);
                }
            }
            kc *= inv_n;
            cx = cx * inv_n - kc * (mx * inv_n);
            cu = cu * inv_n - kc * (mu_ * inv_n);
            K[static_cast<std::size_t>(k) * (M + 1) + l] = kc;
            if (l < M)
                F[static_cast<std::size_t>(k)] -= h * (rho * cu + eps * cx);
        }
    }

    VolterraSolution sol;
    sol.m.assign(static_cast<std::size_t>(M) + 1, 0.0);
    double residual = 0.0;
    int it = 0;
    for (; it < max_iterations; ++it) {
        std::vector<double> next(static_cast<std::size_t>(M) + 1, 0.0);
        residual = 0.0;
        for (int k = 0; k <= M; ++k) {
            double acc = F[static_cast<std::size_t>(k)];
            for (int l = k; l < M; ++l)
                acc += h * K[static_cast<std::size_t>(k) * (M + 1) + l] *
                       sol.m[static_cast<std::size_t>(l)];
            next[static_cast<std::size_t>(k)] = acc;
            residual = std::max(residual, std::abs(acc - sol.m[static_cast<std::size_t>(k)]));
        }
        sol.m = std::move(next);
        if (residual <= tol) break;
    }
    sol.residual = residual;
    sol.iterations = it + 1;
    if (residual > tol) {
        std::ostringstream msg;
        msg << "solve_volterra_mean: fixed point did not reach tol " << tol << " within "
            << max_iterations << " iterations (last residual " << residual << ")";
        throw NumericalError(msg.str());
    }

    // pathwise representation Y_n(k) with E_{t_k}[Y_n(k)] = p(t_k):
    // Y(k) = G(k->k+1) Y(k+1) - h [rho (u - E u) - eps (E X - X)] + h m_k
    std::vector<double> Y(static_cast<std::size_t>(N) * (M + 1), 0.0);
    for (int n = 0; n < N; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * (M + 1);
        Y[base + M] = beta * (ens.mu(M) - ens.x(n, M));
        for (int k = M - 1; k >= 0; --k) {
            const double g_step = std::exp(abar[base + k] - abar[base + k + 1]);
            const double forcing =
                rho * (ens.u(n, k) - u_mean[static_cast<std::size_t>(k)]) -
                eps * (ens.mu(k) - ens.x(n, k));
            Y[base + k] = g_step * Y[base + k + 1] - h * forcing +
                          h * sol.m[static_cast<std::size_t>(k)];
        }
    }

    sol.pathwise = Y;

    // conditional expectation by regression on (X, regime)
    sol.adjoint.resize(ens.grid, N, D);
    std::vector<double> xs(static_cast<std::size_t>(N));
    std::vector<int> regs(static_cast<std::size_t>(N));
    std::vector<double> ys(static_cast<std::size_t>(N));
    for (int k = 0; k <= M; ++k) {
        for (int n = 0; n < N; ++n) {
            xs[static_cast<std::size_t>(n)] = ens.x(n, k);
            regs[static_cast<std::size_t>(n)] = ens.regime(n, k);
            ys[static_cast<std::size_t>(n)] = Y[static_cast<std::size_t>(n) * (M + 1) + k];
        }
        if (k == M) {
            for (int n = 0; n < N; ++n)
                sol.adjoint.p[static_cast<std::size_t>(n) * (M + 1) + M] =
                    ys[static_cast<std::size_t>(n)];
            break;
        }
        const RegimeRegression fit = fit_regime_regression(xs, regs, ys, D, basis_order);
        for (int n = 0; n < N; ++n) {
            const std::size_t row = static_cast<std::size_t>(n) * (M + 1) + k;
            sol.adjoint.p[row] =
                fit.eval(xs[static_cast<std::size_t>(n)], regs[static_cast<std::size_t>(n)]);
            if (D > 1) {
                const int i = regs[static_cast<std::size_t>(n)];
                for (int j = 1; j <= D; ++j) {
                    if (j == i || !fit.regime_fitted(j) || !fit.regime_fitted(i)) continue;
                    sol.adjoint.s[row * D + static_cast<std::size_t>(j - 1)] =
                        fit.eval(xs[static_cast<std::size_t>(n)], j) -
                        fit.eval(xs[static_cast<std::size_t>(n)], i);
                }
            }
        }
    }

    // q from the martingale-residual projection, as in the LSMC solver
    std::vector<double> resp(static_cast<std::size_t>(N));
    for (int k = 0; k < M; ++k) {
        for (int n = 0; n < N; ++n) {
            xs[static_cast<std::size_t>(n)] = ens.x(n, k);
            regs[static_cast<std::size_t>(n)] = ens.regime(n, k);
            resp[static_cast<std::size_t>(n)] =
                (sol.adjoint.p_at(n, k + 1) - sol.adjoint.p_at(n, k)) * ens.brownian(n, k) / h;
        }
        const RegimeRegression qfit = fit_regime_regression(xs, regs, resp, D, basis_order);
        for (int n = 0; n < N; ++n)
            sol.adjoint.q[static_cast<std::size_t>(n) * (M + 1) + k] =
                qfit.eval(xs[static_cast<std::size_t>(n)], regs[static_cast<std::size_t>(n)]);
    }
    return sol;
}

namespace {

struct FieldTables {
    // per (step, regime) values, index (i-1)*(M+1) + k
    std::vector<double> bx, sx, hxx;
    std::vector<double> gx;  // (i-1)*(M+1)*D + k*D + (j-1)
};

double field_at(const std::vector<double>& tab, int M, int i, int k) {
    return tab[static_cast<std::size_t>(i - 1) * (M + 1) + k];
}

}  // namespace

SecondOrderField solve_second_order(const ModelSpec& model, const GeneratorMatrix& gen,
                                    const ParticleEnsemble& ens, const AdjointSample* adjoint,
                                    const SecondOrderOptions& opts) {
    const int N = ens.N;
    const int M = ens.grid.M;
    const int D = gen.dim;

    // second-order coefficient terms of H_xx need the adjoint triple
    bool needs_adjoint = false;
    {
        const double t0 = ens.grid.t(0);
        const double probe = std::abs(model.drift.dxx(t0, ens.x(0, 0), ens.mu(0), 0.0, 1)) +
                             std::abs(model.diffusion.dxx(t0, ens.x(0, 0), ens.mu(0), 0.0, 1));
        needs_adjoint = probe > 0.0 || model.has_jump;
    }
    if (needs_adjoint && adjoint == nullptr)
        throw UnsupportedClassError(
            "solve_second_order: model has second-order coefficient terms in H_xx; "
            "supply the first-order adjoint sample");

    FieldTables tab;
    tab.bx.assign(static_cast<std::size_t>(D) * (M + 1), 0.0);
    tab.sx.assign(static_cast<std::size_t>(D) * (M + 1), 0.0);
    tab.hxx.assign(static_cast<std::size_t>(D) * (M + 1), 0.0);
    tab.gx.assign(static_cast<std::size_t>(D) * (M + 1) * D, 0.0);

    auto hxx_of = [&](double t, double x, double mu, double u, int i, int n, int k) {
        double v = model.running_cost.dxx(t, x, mu, u, i);
        if (adjoint != nullptr) {
            v += model.drift.dxx(t, x, mu, u, i) * adjoint->p_at(n, k) +
                 model.diffusion.dxx(t, x, mu, u, i) * adjoint->q_at(n, k);
            if (model.has_jump)
                for (int j = 1; j <= D; ++j)
                    v += model.jump.dxx(t, x, mu, u, i, j) * adjoint->s_at(n, k, j) *
                         gen.rate(i - 1, j - 1);
        }
        return v;
    };

    for (int k = 0; k <= M; ++k) {
        const double t = ens.grid.t(k);
        const double mu = ens.mu(k);
        std::vector<int> count(static_cast<std::size_t>(D), 0);
        std::vector<double> bx_min(static_cast<std::size_t>(D)), bx_max(static_cast<std::size_t>(D));
        std::vector<double> sx_min(static_cast<std::size_t>(D)), sx_max(static_cast<std::size_t>(D));
        std::vector<double> hx_min(static_cast<std::size_t>(D)), hx_max(static_cast<std::size_t>(D));

        double u_mean = 0.0;
        for (int n = 0; n < N; ++n) u_mean += ens.u(n, std::min(k, M - 1));
        u_mean /= static_cast<double>(N);

        for (int n = 0; n < N; ++n) {
            const int i = ens.regime(n, k);
            const double x = ens.x(n, k);
            const double u = ens.u(n, std::min(k, M - 1));
            const double bx = model.drift.dx(t, x, mu, u, i);
            const double sx = model.diffusion.dx(t, x, mu, u, i);
            const double hxx = hxx_of(t, x, mu, u, i, n, std::min(k, M - 1));
            const std::size_t c = static_cast<std::size_t>(i - 1);
            if (count[c] == 0) {
                bx_min[c] = bx_max[c] = bx;
                sx_min[c] = sx_max[c] = sx;
                hx_min[c] = hx_max[c] = hxx;
            } else {
                bx_min[c] = std::min(bx_min[c], bx);
                bx_max[c] = std::max(bx_max[c], bx);
                sx_min[c] = std::min(sx_min[c], sx);
                sx_max[c] = std::max(sx_max[c], sx);
                hx_min[c] = std::min(hx_min[c], hxx);
                hx_max[c] = std::max(hx_max[c], hxx);
            }
            ++count[c];
        }
        for (int i = 1; i <= D; ++i) {
            const std::size_t c = static_cast<std::size_t>(i - 1);
            const std::size_t idx = c * (M + 1) + static_cast<std::size_t>(k);
            if (count[c] == 0) {
                // regime unvisited at this step: probe at the ensemble mean
                tab.bx[idx] = model.drift.dx(t, mu, mu, u_mean, i);
                tab.sx[idx] = model.diffusion.dx(t, mu, mu, u_mean, i);
                tab.hxx[idx] = model.running_cost.dxx(t, mu, mu, u_mean, i);
            } else {
                auto check = [&](double lo, double hi, const char* what) {
                    const double spread = hi - lo;
                    if (spread > opts.det_tol * std::max(1.0, std::max(std::abs(lo), std::abs(hi)))) {
                        std::ostringstream msg;
                        msg << "solve_second_order: " << what
                            << " varies across the ensemble at step " << k << ", regime " << i
                            << " (spread " << spread << "); per-regime deterministic "
                            << "coefficient fields are required";
                        throw UnsupportedClassError(msg.str());
                    }
                };
                check(bx_min[c], bx_max[c], "b_x");
                check(sx_min[c], sx_max[c], "sigma_x");
                check(hx_min[c], hx_max[c], "H_xx");
                tab.bx[idx] = 0.5 * (bx_min[c] + bx_max[c]);
                tab.sx[idx] = 0.5 * (sx_min[c] + sx_max[c]);
                tab.hxx[idx] = 0.5 * (hx_min[c] + hx_max[c]);
            }
            for (int j = 1; j <= D; ++j)
                tab.gx[(c * (M + 1) + static_cast<std::size_t>(k)) * D +
                       static_cast<std::size_t>(j - 1)] =
                    model.has_jump ? model.jump.dx(t, mu, mu, u_mean, i, j) : 0.0;
        }
    }

    // terminal condition P_i(T) = h_xx in regime i
    SecondOrderField field;
    field.grid = ens.grid;
    field.D = D;
    field.capP.assign(static_cast<std::size_t>(D) * (M + 1), 0.0);
    {
        const double muM = ens.mu(M);
        std::vector<int> count(static_cast<std::size_t>(D), 0);
        std::vector<double> lo(static_cast<std::size_t>(D)), hi(static_cast<std::size_t>(D));
        for (int n = 0; n < N; ++n) {
            const int i = ens.regime(n, M);
            const double v = model.terminal_cost.dxx(ens.x(n, M), muM, i);
            const std::size_t c = static_cast<std::size_t>(i - 1);
            if (count[c] == 0) {
                lo[c] = hi[c] = v;
            } else {
                lo[c] = std::min(lo[c], v);
                hi[c] = std::max(hi[c], v);
            }
            ++count[c];
        }
        for (int i = 1; i <= D; ++i) {
            const std::size_t c = static_cast<std::size_t>(i - 1);
            double v;
            if (count[c] == 0) {
                v = model.terminal_cost.dxx(muM, muM, i);
            } else {
                if (hi[c] - lo[c] >
                    opts.det_tol * std::max(1.0, std::max(std::abs(lo[c]), std::abs(hi[c]))))
                    throw UnsupportedClassError(
                        "solve_second_order: h_xx varies across the ensemble at T");
                v = 0.5 * (lo[c] + hi[c]);
            }
            field.capP[c * (M + 1) + static_cast<std::size_t>(M)] = v;
        }
    }

    // backward RK4 on the regime-coupled linear system; within a step the
    // extracted fields are treated as constant. The drift of the
    // regime-indexed representation P(t) = P_{alpha(t)}(t) carries the chain
    // compensator sum_j (P_j - P_i) zeta_ij in addition to the equation's
    // driver, which restores the Kolmogorov coupling when gamma vanishes.
    auto rhs = [&](int k_fields, const std::vector<double>& P, std::vector<double>& out) {
        for (int i = 1; i <= D; ++i) {
            const std::size_t c = static_cast<std::size_t>(i - 1);
            const double bx = field_at(tab.bx, M, i, k_fields);
            const double sx = field_at(tab.sx, M, i, k_fields);
            const double hxx = field_at(tab.hxx, M, i, k_fields);
            const double Pi = P[c];
            double drv = 2.0 * bx * Pi + sx * sx * Pi + hxx;
            for (int j = 1; j <= D; ++j) {
                const double Sj = P[static_cast<std::size_t>(j - 1)] - Pi;
                const double gx =
                    tab.gx[(c * (M + 1) + static_cast<std::size_t>(k_fields)) * D +
                           static_cast<std::size_t>(j - 1)];
                const double zeta = gen.rate(i - 1, j - 1);
                drv += (gx * gx * (Pi + Sj) + 2.0 * gx * Sj) * zeta;
                drv += Sj * zeta;  // chain compensator of the representation
            }
            out[c] = -drv;  // dP_i/dt
        }
    };

    const int sub = std::max(1, opts.substeps);
    std::vector<double> P(static_cast<std::size_t>(D)), k1(P), k2(P), k3(P), k4(P), tmp(P);
    for (int i = 1; i <= D; ++i)
        P[static_cast<std::size_t>(i - 1)] =
            field.capP[static_cast<std::size_t>(i - 1) * (M + 1) + static_cast<std::size_t>(M)];
    for (int k = M; k > 0; --k) {
        const double dt = -ens.grid.h / static_cast<double>(sub);
        for (int s = 0; s < sub; ++s) {
            rhs(k - 1, P, k1);
            for (int i = 0; i < D; ++i) tmp[static_cast<std::size_t>(i)] = P[static_cast<std::size_t>(i)] + 0.5 * dt * k1[static_cast<std::size_t>(i)];
            rhs(k - 1, tmp, k2);
            for (int i = 0; i < D; ++i) tmp[static_cast<std::size_t>(i)] = P[static_cast<std::size_t>(i)] + 0.5 * dt * k2[static_cast<std::size_t>(i)];
            rhs(k - 1, tmp, k3);
            for (int i = 0; i < D; ++i) tmp[static_cast<std::size_t>(i)] = P[static_cast<std::size_t>(i)] + dt * k3[static_cast<std::size_t>(i)];
            rhs(k - 1, tmp, k4);
            for (int i = 0; i < D; ++i)
                P[static_cast<std::size_t>(i)] +=
                    dt / 6.0 * (k1[static_cast<std::size_t>(i)] + 2.0 * k2[static_cast<std::size_t>(i)] +
                                2.0 * k3[static_cast<std::size_t>(i)] + k4[static_cast<std::size_t>(i)]);
        }
        for (int i = 0; i < D; ++i) {
            if (!std::isfinite(P[static_cast<std::size_t>(i)]))
                throw NumericalError("solve_second_order: non-finite P");
            field.capP[static_cast<std::size_t>(i) * (M + 1) + static_cast<std::size_t>(k - 1)] =
                P[static_cast<std::size_t>(i)];
        }
    }
    return field;
}

}  // namespace mfc
