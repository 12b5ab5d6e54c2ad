#include "mfc/mp_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfc/rng.hpp"
#include "mfc/threading.hpp"

namespace mfc {

namespace {

double default_frac_cap(const CheckOptions& opts, int N) {
    return opts.frac_cap >= 0.0 ? opts.frac_cap : 1.0 / std::sqrt(static_cast<double>(N));
}

void push_offender(CheckReport& report, int max_keep, int particle, int step, double u,
                   double value) {
    report.worst.push_back({particle, step, u, value});
    std::sort(report.worst.begin(), report.worst.end(),
              [](const auto& a, const auto& b) { return a.value > b.value; });
    if (static_cast<int>(report.worst.size()) > max_keep) report.worst.resize(static_cast<std::size_t>(max_keep));
}

}  // namespace

SpikeDifference spike_difference(const ModelSpec& model, double t, double x, double y,
                                 double u_spike, double u_star, int regime, int dim) {
    SpikeDifference d;
    d.db = model.drift.value(t, x, y, u_spike, regime) -
           model.drift.value(t, x, y, u_star, regime);
    d.dsigma = model.diffusion.value(t, x, y, u_spike, regime) -
               model.diffusion.value(t, x, y, u_star, regime);
    d.dgamma.assign(static_cast<std::size_t>(dim), 0.0);
    if (model.has_jump) {
        for (int j = 1; j <= dim; ++j)
            d.dgamma[static_cast<std::size_t>(j - 1)] =
                model.jump.value(t, x, y, u_spike, regime, j) -
                model.jump.value(t, x, y, u_star, regime, j);
    }
    return d;
}

std::string CheckReport::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\"condition\":\"" << condition << "\",\"max_violation\":" << max_violation
       << ",\"violating_fraction\":" << violating_fraction << ",\"tol\":" << tol
       << ",\"frac_cap\":" << frac_cap << ",\"pass\":" << (pass ? "true" : "false")
       << ",\"worst\":[";
    for (std::size_t i = 0; i < worst.size(); ++i) {
        if (i) os << ",";
        os << "{\"particle\":" << worst[i].particle << ",\"step\":" << worst[i].step
           << ",\"u\":" << worst[i].u << ",\"value\":" << worst[i].value << "}";
    }
    os << "]}";
    return os.str();
}

std::string CheckReport::to_line() const {
    std::ostringstream os;
    os << (pass ? "PASS" : "FAIL") << "  " << condition << "  max_violation=" << max_violation
       << "  violating_fraction=" << violating_fraction << "  tol=" << tol
       << "  frac_cap=" << frac_cap;
    return os.str();
}

CheckReport check_variational_inequality(const ModelSpec& model, const GeneratorMatrix& gen,
                                         const ParticleEnsemble& ens,
                                         const AdjointSample& adjoint,
                                         const SecondOrderField& second,
                                         const std::vector<double>& control_grid,
                                         const CheckOptions& opts) {
    if (adjoint.N != ens.N || !(adjoint.grid == ens.grid))
        throw ValidationError("check_variational_inequality: adjoint/ensemble shape mismatch");
    if (second.D != gen.dim || !(second.grid == ens.grid))
        throw ValidationError("check_variational_inequality: second-order field shape mismatch");

    const int N = ens.N;
    const int M = ens.grid.M;
    const int D = gen.dim;

    // per-particle worst gain, computed in parallel into disjoint slots
    std::vector<double> worst_gain(static_cast<std::size_t>(N),
                                   -std::numeric_limits<double>::infinity());
    std::vector<int> worst_step(static_cast<std::size_t>(N), 0);
    std::vector<double> worst_u(static_cast<std::size_t>(N), 0.0);
    std::vector<int> violations(static_cast<std::size_t>(N), 0);

    parallel_for(N, opts.threads, [&](int begin, int end) {
        for (int n = begin; n < end; ++n) {
            for (int k = 0; k < M; ++k) {
                const double t = ens.grid.t(k);
                const double x = ens.x(n, k);
                const double mu = ens.mu(k);
                const int i = ens.regime(n, k);
                const double u_star = ens.u(n, k);
                const double p = adjoint.p_at(n, k);
                const double q = adjoint.q_at(n, k);
                const auto s = adjoint.s_row(n, k);
                const double H_star =
                    hamiltonian(model, gen, t, x, mu, u_star, i, p, q, s);
                const double P = second.P(i, k);

                double step_max = -std::numeric_limits<double>::infinity();
                double step_arg = u_star;
                for (double g : control_grid) {
                    const double u = opts.grid_is_offsets ? u_star + g : g;
                    double gain =
                        hamiltonian(model, gen, t, x, mu, u, i, p, q, s) - H_star;
                    const SpikeDifference d =
                        spike_difference(model, t, x, mu, u, u_star, i, D);
                    gain += 0.5 * P * d.dsigma * d.dsigma;
                    if (model.has_jump) {
                        for (int j = 1; j <= D; ++j)
                            gain += 0.5 * (P + second.S(i, j, k)) *
                                    d.dgamma[static_cast<std::size_t>(j - 1)] *
                                    d.dgamma[static_cast<std::size_t>(j - 1)] *
                                    gen.rate(i - 1, j - 1);
                    }
                    if (gain > step_max) {
                        step_max = gain;
                        step_arg = u;
                    }
                }
                if (step_max > opts.tol) ++violations[static_cast<std::size_t>(n)];
                if (step_max > worst_gain[static_cast<std::size_t>(n)]) {
                    worst_gain[static_cast<std::size_t>(n)] = step_max;
                    worst_step[static_cast<std::size_t>(n)] = k;
                    worst_u[static_cast<std::size_t>(n)] = step_arg;
                }
            }
        }
    });

    CheckReport report;
    report.condition = "variational_inequality";
    report.tol = opts.tol;
    report.frac_cap = default_frac_cap(opts, N);
    long long total_violations = 0;
    report.max_violation = -std::numeric_limits<double>::infinity();
    for (int n = 0; n < N; ++n) {
        total_violations += violations[static_cast<std::size_t>(n)];
        if (worst_gain[static_cast<std::size_t>(n)] > report.max_violation) {
            report.max_violation = worst_gain[static_cast<std::size_t>(n)];
        }
        push_offender(report, opts.max_offenders, n, worst_step[static_cast<std::size_t>(n)],
                      worst_u[static_cast<std::size_t>(n)],
                      worst_gain[static_cast<std::size_t>(n)]);
    }
    report.violating_fraction =
        static_cast<double>(total_violations) / (static_cast<double>(N) * M);
    report.pass = report.max_violation <= opts.tol;
    return report;
}

SingularCheckReports check_singular_conditions(const ModelSpec& model,
                                               const ParticleEnsemble& ens,
                                               const AdjointSample& adjoint,
                                               const SingularControl& singular,
                                               const CheckOptions& opts) {
    if (adjoint.N != ens.N || !(adjoint.grid == ens.grid))
        throw ValidationError("check_singular_conditions: adjoint/ensemble shape mismatch");
    const int N = ens.N;
    const int M = ens.grid.M;
    const double cap = default_frac_cap(opts, N);

    // condition A: kappa(t) + G(t, alpha(t-)) p <= 0 (empirical fraction above tol)
    SingularCheckReports out;
    out.nonpositivity.condition = "singular_nonpositivity";
    out.nonpositivity.tol = opts.tol;
    out.nonpositivity.frac_cap = cap;
    out.nonpositivity.max_violation = -std::numeric_limits<double>::infinity();
    long long bad = 0;
    for (int n = 0; n < N; ++n) {
        for (int k = 0; k <= M; ++k) {
            const double t = ens.grid.t(k);
            const double v =
                model.singular_cost_rate(t) + model.singular(t, ens.regime(n, k)) * adjoint.p_at(n, k);
            if (v > out.nonpositivity.max_violation) {
                out.nonpositivity.max_violation = v;
                out.nonpositivity.worst.clear();
                out.nonpositivity.worst.push_back({n, k, 0.0, v});
            }
            if (v > opts.tol) ++bad;
        }
    }
    out.nonpositivity.violating_fraction =
        static_cast<double>(bad) / (static_cast<double>(N) * (M + 1));
    out.nonpositivity.pass = out.nonpositivity.violating_fraction <= cap;

    // condition B: complementary slackness with the strict set
    // {kappa + G p < -tol}: mass is allowed only where kappa + G p is ~ 0.
    out.complementarity.condition = "singular_complementarity";
    out.complementarity.tol = opts.tol;
    out.complementarity.frac_cap = cap;
    double total_mass = 0.0;
    double bad_mass = 0.0;
    for (const auto& atom : singular.atoms) {
        const int k = ens.grid.step_of(atom.time);
        const double t = atom.time;
        for (int n = 0; n < N; ++n) {
            const double mass = atom.size_for(n);
            if (mass <= 0.0) continue;
            total_mass += mass;
            const double v =
                model.singular_cost_rate(t) + model.singular(t, ens.regime(n, k)) * adjoint.p_at(n, k);
            if (v < -opts.tol) {
                bad_mass += mass;
                if (-v > out.complementarity.max_violation)
                    out.complementarity.max_violation = -v;
            }
        }
    }
    if (!singular.density.empty()) {
        for (int k = 0; k < M; ++k) {
            const double rate = singular.density[static_cast<std::size_t>(k)];
            if (rate <= 0.0) continue;
            const double t = ens.grid.t(k);
            const double mass = rate * ens.grid.h;
            for (int n = 0; n < N; ++n) {
                total_mass += mass;
                const double v = model.singular_cost_rate(t) +
                                 model.singular(t, ens.regime(n, k)) * adjoint.p_at(n, k);
                if (v < -opts.tol) bad_mass += mass;
            }
        }
    }
    out.complementarity.violating_fraction = total_mass > 0.0 ? bad_mass / total_mass : 0.0;
    out.complementarity.pass = out.complementarity.violating_fraction <= cap;
    out.pass = out.nonpositivity.pass && out.complementarity.pass;
    return out;
}

double max_eigenvalue_sym(std::vector<double> A, int n) {
    // cyclic Jacobi; n is tiny here
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += std::abs(A[static_cast<std::size_t>(p) * n + q]);
        if (off < 1e-14) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A[static_cast<std::size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = A[static_cast<std::size_t>(p) * n + p];
                const double aqq = A[static_cast<std::size_t>(q) * n + q];
                const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int k = 0; k < n; ++k) {
                    const double akp = A[static_cast<std::size_t>(k) * n + p];
                    const double akq = A[static_cast<std::size_t>(k) * n + q];
                    A[static_cast<std::size_t>(k) * n + p] = c * akp - s * akq;
                    A[static_cast<std::size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = A[static_cast<std::size_t>(p) * n + k];
                    const double aqk = A[static_cast<std::size_t>(q) * n + k];
                    A[static_cast<std::size_t>(p) * n + k] = c * apk - s * aqk;
                    A[static_cast<std::size_t>(q) * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    double lam = A[0];
    for (int i = 1; i < n; ++i) lam = std::max(lam, A[static_cast<std::size_t>(i) * n + i]);
    return lam;
}

namespace {

CheckReport concavity_check(const std::string& name, const ModelSpec& model,
                            const GeneratorMatrix& gen, const ParticleEnsemble& ens,
                            const AdjointSample& adjoint, bool terminal,
                            const CheckOptions& opts, const ConcavityOptions& copts) {
    CheckReport report;
    report.condition = name;
    report.tol = opts.tol;
    report.frac_cap = default_frac_cap(opts, ens.N);
    report.max_violation = -std::numeric_limits<double>::infinity();

    const int N = ens.N;
    const int M = ens.grid.M;

    double x_lo = ens.x(0, 0), x_hi = x_lo;
    for (int n = 0; n < N; ++n)
        for (int k = 0; k <= M; ++k) {
            x_lo = std::min(x_lo, ens.x(n, k));
            x_hi = std::max(x_hi, ens.x(n, k));
        }
    const double pad = copts.box_inflate * std::max(1e-6, x_hi - x_lo);
    x_lo -= pad;
    x_hi += pad;

    RngStream rng(copts.seed, 0, 0, RngChannel::scan);
    long long violations = 0;
    for (int sample = 0; sample < copts.samples; ++sample) {
        const int n = static_cast<int>(rng.next_uniform() * N) % N;
        const int k = static_cast<int>(rng.next_uniform() * M) % M;
        const double t = ens.grid.t(k);
        const int regime = ens.regime(n, k);
        const double x = x_lo + (x_hi - x_lo) * rng.next_uniform();
        const double y = x_lo + (x_hi - x_lo) * rng.next_uniform();
        const double u = model.control_set.lo +
                         (model.control_set.hi - model.control_set.lo) * rng.next_uniform();
        const double p = adjoint.p_at(n, k);
        const double q = adjoint.q_at(n, k);
        const auto s = adjoint.s_row(n, k);

        const double d = copts.fd_step * std::max({1.0, std::abs(x), std::abs(y), std::abs(u)});
        double lam;
        if (!terminal) {
            auto Hf = [&](double xx, double yy, double uu) {
                return hamiltonian(model, gen, t, xx, yy, uu, regime, p, q, s);
            };
            std::vector<double> hess(9, 0.0);
            const double f0 = Hf(x, y, u);
            hess[0] = (Hf(x + d, y, u) - 2 * f0 + Hf(x - d, y, u)) / (d * d);
            hess[4] = (Hf(x, y + d, u) - 2 * f0 + Hf(x, y - d, u)) / (d * d);
            hess[8] = (Hf(x, y, u + d) - 2 * f0 + Hf(x, y, u - d)) / (d * d);
            hess[1] = hess[3] = (Hf(x + d, y + d, u) - Hf(x + d, y - d, u) -
                                 Hf(x - d, y + d, u) + Hf(x - d, y - d, u)) /
                                (4 * d * d);
            hess[2] = hess[6] = (Hf(x + d, y, u + d) - Hf(x + d, y, u - d) -
                                 Hf(x - d, y, u + d) + Hf(x - d, y, u - d)) /
                                (4 * d * d);
            hess[5] = hess[7] = (Hf(x, y + d, u + d) - Hf(x, y + d, u - d) -
                                 Hf(x, y - d, u + d) + Hf(x, y - d, u - d)) /
                                (4 * d * d);
            lam = max_eigenvalue_sym(hess, 3);
        } else {
            auto hf = [&](double xx, double yy) {
                return model.terminal_cost.value(xx, yy, regime);
            };
            std::vector<double> hess(4, 0.0);
            const double f0 = hf(x, y);
            hess[0] = (hf(x + d, y) - 2 * f0 + hf(x - d, y)) / (d * d);
            hess[3] = (hf(x, y + d) - 2 * f0 + hf(x, y - d)) / (d * d);
            hess[1] = hess[2] =
                (hf(x + d, y + d) - hf(x + d, y - d) - hf(x - d, y + d) + hf(x - d, y - d)) /
                (4 * d * d);
            lam = max_eigenvalue_sym(hess, 2);
        }
        if (lam > report.max_violation) {
            report.max_violation = lam;
            report.worst.clear();
            report.worst.push_back({n, k, u, lam});
        }
        if (lam > opts.tol) ++violations;
    }
    report.violating_fraction =
        static_cast<double>(violations) / std::max(1, copts.samples);
    report.pass = report.max_violation <= opts.tol;
    return report;
}

}  // namespace

SufficientReport check_sufficient(const ModelSpec& model, const GeneratorMatrix& gen,
                                  const ParticleEnsemble& ens, const AdjointSample& adjoint,
                                  const SingularControl& singular,
                                  const std::vector<double>& control_grid,
                                  const CheckOptions& opts, const ConcavityOptions& copts) {
    if (!(model.control_set.lo < model.control_set.hi))
        throw ValidationError("check_sufficient: A1 must be a nonempty closed interval");
    if (adjoint.N != ens.N || !(adjoint.grid == ens.grid))
        throw ValidationError("check_sufficient: adjoint/ensemble shape mismatch");

    SufficientReport out;
    out.concavity_hamiltonian =
        concavity_check("concavity_hamiltonian", model, gen, ens, adjoint, false, opts, copts);
    out.concavity_terminal =
        concavity_check("concavity_terminal", model, gen, ens, adjoint, true, opts, copts);

    // maximum condition: grid argmax of H vs the candidate value
    const int N = ens.N;
    const int M = ens.grid.M;
    double pitch = 0.0;
    for (std::size_t i = 1; i < control_grid.size(); ++i)
        pitch = std::max(pitch, control_grid[i] - control_grid[i - 1]);

    CheckReport& mc = out.maximum_condition;
    mc.condition = "maximum_condition";
    mc.tol = pitch + opts.tol;
    mc.frac_cap = default_frac_cap(opts, N);
    mc.max_violation = -std::numeric_limits<double>::infinity();
    long long bad = 0;
    std::vector<double> deviation(static_cast<std::size_t>(N), 0.0);
    std::vector<int> dev_step(static_cast<std::size_t>(N), 0);
    std::vector<long long> dev_bad(static_cast<std::size_t>(N), 0);
    parallel_for(N, opts.threads, [&](int begin, int end) {
        for (int n = begin; n < end; ++n) {
            for (int k = 0; k < M; ++k) {
                const double t = ens.grid.t(k);
                const double x = ens.x(n, k);
                const double mu = ens.mu(k);
                const int i = ens.regime(n, k);
                const double p = adjoint.p_at(n, k);
                const double q = adjoint.q_at(n, k);
                const auto s = adjoint.s_row(n, k);
                double best_u = control_grid.front();
                double best_H = -std::numeric_limits<double>::infinity();
                for (double u : control_grid) {
                    const double H = hamiltonian(model, gen, t, x, mu, u, i, p, q, s);
                    if (H > best_H) {
                        best_H = H;
                        best_u = u;
                    }
                }
                const double dev = std::abs(best_u - ens.u(n, k));
                if (dev > deviation[static_cast<std::size_t>(n)]) {
                    deviation[static_cast<std::size_t>(n)] = dev;
                    dev_step[static_cast<std::size_t>(n)] = k;
                }
                if (dev > mc.tol) ++dev_bad[static_cast<std::size_t>(n)];
            }
        }
    });
    for (int n = 0; n < N; ++n) {
        bad += dev_bad[static_cast<std::size_t>(n)];
        if (deviation[static_cast<std::size_t>(n)] > mc.max_violation) {
            mc.max_violation = deviation[static_cast<std::size_t>(n)];
            mc.worst.clear();
            mc.worst.push_back({n, dev_step[static_cast<std::size_t>(n)], 0.0,
                                deviation[static_cast<std::size_t>(n)]});
        }
    }
    mc.violating_fraction = static_cast<double>(bad) / (static_cast<double>(N) * M);
    mc.pass = mc.max_violation <= mc.tol;

    // singular complementarity: the probability conditions of the theorem
    out.singular = check_singular_conditions(model, ens, adjoint, singular, opts);

    out.pass = out.concavity_hamiltonian.pass && out.concavity_terminal.pass &&
               out.maximum_condition.pass && out.singular.pass;
    return out;
}

CostComparison compare_costs(const ModelSpec& model, const GeneratorMatrix& gen,
                             const TimeGrid& grid, int N, std::uint64_t seed,
                             const ControlPair& candidate,
                             const std::vector<ControlPair>& perturbations,
                             const std::vector<std::string>& labels, const SimOptions& opts) {
    const NoiseBundle noise = make_noise(gen, grid, N, seed, opts);

    const ParticleEnsemble cand_ens = simulate_with_noise(model, noise, candidate, opts);
    const CostEstimate cand_cost = estimate_cost(model, cand_ens, candidate);

    CostComparison cmp;
    cmp.candidate.label = "candidate";
    cmp.candidate.J = cand_cost.J;
    cmp.candidate.SE = cand_cost.standard_error;

    for (std::size_t idx = 0; idx < perturbations.size(); ++idx) {
        const ParticleEnsemble ens = simulate_with_noise(model, noise, perturbations[idx], opts);
        const CostEstimate cost = estimate_cost(model, ens, perturbations[idx]);
        CostComparison::Row row;
        row.label = idx < labels.size() ? labels[idx]
                                        : "perturbation_" + std::to_string(idx + 1);
        row.J = cost.J;
        row.SE = cost.standard_error;

        double mean_diff = 0.0;
        for (int n = 0; n < N; ++n)
            mean_diff += cost.per_particle[static_cast<std::size_t>(n)] -
                         cand_cost.per_particle[static_cast<std::size_t>(n)];
        mean_diff /= static_cast<double>(N);
        double var = 0.0;
        for (int n = 0; n < N; ++n) {
            const double d = cost.per_particle[static_cast<std::size_t>(n)] -
                             cand_cost.per_particle[static_cast<std::size_t>(n)] - mean_diff;
            var += d * d;
        }
        var /= std::max(1, N - 1);
        row.diff = mean_diff;
        row.diff_se = std::sqrt(var / static_cast<double>(N));
        row.flagged = row.diff > 2.0 * row.diff_se;
        cmp.any_flagged = cmp.any_flagged || row.flagged;
        cmp.rows.push_back(std::move(row));
    }
    return cmp;
}

}  // namespace mfc
