#include "mfc/model.hpp"

#include <cmath>
#include <sstream>

#include "mfc/rng.hpp"

namespace mfc {

namespace {

Coefficient::Fn zero_fn() {
    return [](double, double, double, double, int) { return 0.0; };
}

void fill_missing(Coefficient& c) {
    if (!c.value) c.value = zero_fn();
    if (!c.dx) c.dx = zero_fn();
    if (!c.dy) c.dy = zero_fn();
    if (!c.du) c.du = zero_fn();
    if (!c.dxx) c.dxx = zero_fn();
    if (!c.dxy) c.dxy = zero_fn();
    if (!c.dyy) c.dyy = zero_fn();
}

}  // namespace

Coefficient Coefficient::zero() {
    Coefficient c;
    fill_missing(c);
    return c;
}

Coefficient Coefficient::constant(double v) {
    Coefficient c = zero();
    c.value = [v](double, double, double, double, int) { return v; };
    return c;
}

VectorCoefficient VectorCoefficient::zero() {
    VectorCoefficient g;
    auto z = [](double, double, double, double, int, int) { return 0.0; };
    g.value = z;
    g.dx = z;
    g.dy = z;
    g.du = z;
    g.dxx = z;
    g.dxy = z;
    g.dyy = z;
    return g;
}

TerminalCost TerminalCost::zero() {
    TerminalCost h;
    auto z = [](double, double, int) { return 0.0; };
    h.value = z;
    h.dx = z;
    h.dy = z;
    h.dxx = z;
    h.dxy = z;
    h.dyy = z;
    return h;
}

std::vector<double> ControlInterval::grid(int n) const {
    if (n < 2) throw ValidationError("control grid needs at least 2 points");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        g[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
    return g;
}

ModelSpec ModelSpec::empty(int regimes) {
    ModelSpec m;
    m.drift = Coefficient::zero();
    m.diffusion = Coefficient::zero();
    m.jump = VectorCoefficient::zero();
    m.has_jump = false;
    m.singular = [](double, int) { return 0.0; };
    m.running_cost = Coefficient::zero();
    m.singular_cost_rate = [](double) { return 0.0; };
    m.terminal_cost = TerminalCost::zero();
    m.mean_map = [](double x) { return x; };
    m.mean_map_dx = [](double) { return 1.0; };
    m.regimes = regimes;
    return m;
}

bool InterbankParams::regime_independent() const {
    for (std::size_t i = 1; i < a.size(); ++i)
        if (a[i] != a[0] || b[i] != b[0] || c[i] != c[0]) return false;
    return true;
}

void InterbankParams::validate() const {
    generator.validate();
    const std::size_t d = static_cast<std::size_t>(generator.dim);
    if (a.size() != d || b.size() != d || c.size() != d)
        throw ValidationError("interbank: per-regime vectors a, b, c must match the generator dimension");
    if (!(epsilon > 0.0)) throw ValidationError("interbank: epsilon must be > 0");
    if (!(beta >= 0.0)) throw ValidationError("interbank: beta must be >= 0");
    if (rho * rho > epsilon) {
        std::ostringstream msg;
        msg << "interbank: convexity violated, rho^2 = " << rho * rho << " > epsilon = " << epsilon;
        throw ValidationError(msg.str());
    }
    if (!(sigma >= 0.0)) throw ValidationError("interbank: sigma must be >= 0");
    if (!(T > 0.0)) throw ValidationError("interbank: T must be > 0");
    if (!(u_lo < u_hi)) throw ValidationError("interbank: control interval must be nonempty");
}

ModelSpec interbank_model(const InterbankParams& params) {
    params.validate();
    const auto a = params.a;
    const auto b = params.b;
    const auto c = params.c;
    const double rho = params.rho;
    const double eps = params.epsilon;
    const double beta = params.beta;
    const double kappa = params.kappa;

    ModelSpec m = ModelSpec::empty(params.regimes());
    m.name = "interbank";
    m.x0 = params.x0;
    m.T = params.T;
    m.control_set = ControlInterval{params.u_lo, params.u_hi};

    // drift a_i (y - x) + b_i u
    m.drift.value = [a, b](double, double x, double y, double u, int i) {
        return a[static_cast<std::size_t>(i - 1)] * (y - x) + b[static_cast<std::size_t>(i - 1)] * u;
    };
    m.drift.dx = [a](double, double, double, double, int i) { return -a[static_cast<std::size_t>(i - 1)]; };
    m.drift.dy = [a](double, double, double, double, int i) { return a[static_cast<std::size_t>(i - 1)]; };
    m.drift.du = [b](double, double, double, double, int i) { return b[static_cast<std::size_t>(i - 1)]; };

    const double sigma = params.sigma;
    m.diffusion.value = [sigma](double, double, double, double, int) { return sigma; };

    // maximization-form running cost: -u^2/2 + rho u (y - x) - eps/2 (y - x)^2
    m.running_cost.value = [rho, eps](double, double x, double y, double u, int) {
        const double d = y - x;
        return -0.5 * u * u + rho * u * d - 0.5 * eps * d * d;
    };
    m.running_cost.dx = [rho, eps](double, double x, double y, double u, int) {
        return -rho * u + eps * (y - x);
    };
    m.running_cost.dy = [rho, eps](double, double x, double y, double u, int) {
        return rho * u - eps * (y - x);
    };
    m.running_cost.du = [rho](double, double x, double y, double u, int) {
        return -u + rho * (y - x);
    };
    m.running_cost.dxx = [eps](double, double, double, double, int) { return -eps; };
    m.running_cost.dxy = [eps](double, double, double, double, int) { return eps; };
    m.running_cost.dyy = [eps](double, double, double, double, int) { return -eps; };

    // terminal cost -beta/2 (y - x)^2
    m.terminal_cost.value = [beta](double x, double y, int) {
        const double d = y - x;
        return -0.5 * beta * d * d;
    };
    m.terminal_cost.dx = [beta](double x, double y, int) { return beta * (y - x); };
    m.terminal_cost.dy = [beta](double x, double y, int) { return -beta * (y - x); };
    m.terminal_cost.dxx = [beta](double, double, int) { return -beta; };
    m.terminal_cost.dxy = [beta](double, double, int) { return beta; };
    m.terminal_cost.dyy = [beta](double, double, int) { return -beta; };

    // singular leg: G = -c_i, generic rate -kappa, so +int kappa_gen dxi = -int kappa dxi
    m.singular = [c](double, int i) { return -c[static_cast<std::size_t>(i - 1)]; };
    m.singular_cost_rate = [kappa](double) { return -kappa; };

    // no jump coefficient in the application
    m.has_jump = false;
    return m;
}

namespace {

struct EvalPoint {
    double t, x, y, u;
    int regime;
};

using Eval = std::function<double(const EvalPoint&)>;

double central1(const Eval& f, EvalPoint p, double EvalPoint::*member, double step) {
    EvalPoint hi = p, lo = p;
    hi.*member += step;
    lo.*member -= step;
    return (f(hi) - f(lo)) / (2.0 * step);
}

double central2(const Eval& f, EvalPoint p, double EvalPoint::*member, double step) {
    EvalPoint hi = p, lo = p;
    hi.*member += step;
    lo.*member -= step;
    return (f(hi) - 2.0 * f(p) + f(lo)) / (step * step);
}

double central_mixed(const Eval& f, EvalPoint p, double step) {
    EvalPoint pp = p, pm = p, mp = p, mm = p;
    pp.x += step; pp.y += step;
    pm.x += step; pm.y -= step;
    mp.x -= step; mp.y += step;
    mm.x -= step; mm.y -= step;
    return (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * step * step);
}

void record(ModelValidationReport& report, const std::string& name, double analytic,
            double numeric, double scale, double tol, const EvalPoint& p) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric), scale});
    const double rel = std::abs(analytic - numeric) / denom;
    for (auto& e : report.entries) {
        if (e.coefficient == name) {
            if (rel > e.max_rel_error) {
                e.max_rel_error = rel;
                e.worst_t = p.t;
                e.worst_x = p.x;
                e.worst_y = p.y;
                e.worst_u = p.u;
                e.worst_regime = p.regime;
                e.pass = rel <= tol;
            }
            return;
        }
    }
    ModelValidationReport::Entry e;
    e.coefficient = name;
    e.max_rel_error = rel;
    e.worst_t = p.t;
    e.worst_x = p.x;
    e.worst_y = p.y;
    e.worst_u = p.u;
    e.worst_regime = p.regime;
    e.pass = rel <= tol;
    report.entries.push_back(e);
}

}  // namespace

ModelValidationReport validate_model(const ModelSpec& model, int samples, std::uint64_t seed,
                                     double tol, const ValidationBox& box) {
    ModelValidationReport report;
    RngStream rng(seed, 0, 0, RngChannel::scan);
    const double d1 = 1e-5;  // first-derivative step
    const double d2 = 1e-3;  // second-derivative step

    auto check_coeff = [&](const std::string& name, const Coefficient& c, const EvalPoint& p) {
        Eval f = [&c](const EvalPoint& q) { return c.value(q.t, q.x, q.y, q.u, q.regime); };
        const double scale = std::abs(f(p));
        record(report, name + "_x", c.dx(p.t, p.x, p.y, p.u, p.regime),
               central1(f, p, &EvalPoint::x, d1), scale, tol, p);
        record(report, name + "_y", c.dy(p.t, p.x, p.y, p.u, p.regime),
               central1(f, p, &EvalPoint::y, d1), scale, tol, p);
        record(report, name + "_u", c.du(p.t, p.x, p.y, p.u, p.regime),
               central1(f, p, &EvalPoint::u, d1), scale, tol, p);
        record(report, name + "_xx", c.dxx(p.t, p.x, p.y, p.u, p.regime),
               central2(f, p, &EvalPoint::x, d2), scale, std::max(tol, 1e-5), p);
        record(report, name + "_yy", c.dyy(p.t, p.x, p.y, p.u, p.regime),
               central2(f, p, &EvalPoint::y, d2), scale, std::max(tol, 1e-5), p);
        record(report, name + "_xy", c.dxy(p.t, p.x, p.y, p.u, p.regime),
               central_mixed(f, p, d2), scale, std::max(tol, 1e-5), p);
    };

    for (int s = 0; s < samples; ++s) {
        EvalPoint p;
        p.t = model.T * rng.next_uniform();
        p.x = box.x_lo + (box.x_hi - box.x_lo) * rng.next_uniform();
        p.y = box.y_lo + (box.y_hi - box.y_lo) * rng.next_uniform();
        p.u = model.control_set.lo +
              (model.control_set.hi - model.control_set.lo) * rng.next_uniform();
        p.regime = 1 + static_cast<int>(rng.next_uniform() * model.regimes) % model.regimes;

        check_coeff("b", model.drift, p);
        check_coeff("sigma", model.diffusion, p);
        check_coeff("f", model.running_cost, p);

        // gamma: every component, plus the dimension contract
        for (int j = 1; j <= model.regimes; ++j) {
            Eval f = [&](const EvalPoint& q) {
                return model.jump.value(q.t, q.x, q.y, q.u, q.regime, j);
            };
            const std::string name = "gamma_" + std::to_string(j);
            record(report, name + "_x", model.jump.dx(p.t, p.x, p.y, p.u, p.regime, j),
                   central1(f, p, &EvalPoint::x, d1), std::abs(f(p)), tol, p);
            record(report, name + "_y", model.jump.dy(p.t, p.x, p.y, p.u, p.regime, j),
                   central1(f, p, &EvalPoint::y, d1), std::abs(f(p)), tol, p);
        }

        // terminal cost in (x, y)
        Eval hf = [&](const EvalPoint& q) { return model.terminal_cost.value(q.x, q.y, q.regime); };
        const double hscale = std::abs(hf(p));
        record(report, "h_x", model.terminal_cost.dx(p.x, p.y, p.regime),
               central1(hf, p, &EvalPoint::x, d1), hscale, tol, p);
        record(report, "h_y", model.terminal_cost.dy(p.x, p.y, p.regime),
               central1(hf, p, &EvalPoint::y, d1), hscale, tol, p);
        record(report, "h_xx", model.terminal_cost.dxx(p.x, p.y, p.regime),
               central2(hf, p, &EvalPoint::x, d2), hscale, std::max(tol, 1e-5), p);
        record(report, "h_yy", model.terminal_cost.dyy(p.x, p.y, p.regime),
               central2(hf, p, &EvalPoint::y, d2), hscale, std::max(tol, 1e-5), p);
        record(report, "h_xy", model.terminal_cost.dxy(p.x, p.y, p.regime),
               central_mixed(hf, p, d2), hscale, std::max(tol, 1e-5), p);

        // phi
        Eval phif = [&](const EvalPoint& q) { return model.mean_map(q.x); };
        record(report, "phi_x", model.mean_map_dx(p.x), central1(phif, p, &EvalPoint::x, d1),
               std::abs(model.mean_map(p.x)), tol, p);
    }

    report.pass = true;
    for (const auto& e : report.entries) report.pass = report.pass && e.pass;
    return report;
}

std::string ModelValidationReport::summary() const {
    std::ostringstream os;
    os << (pass ? "PASS" : "FAIL") << " model derivative validation\n";
    for (const auto& e : entries) {
        os << "  " << (e.pass ? "ok  " : "FAIL") << " " << e.coefficient
           << " max_rel_error=" << e.max_rel_error;
        if (!e.pass)
            os << " at (t=" << e.worst_t << ", x=" << e.worst_x << ", y=" << e.worst_y
               << ", u=" << e.worst_u << ", regime=" << e.worst_regime << ")";
        os << "\n";
    }
    return os.str();
}

}  // namespace mfc
