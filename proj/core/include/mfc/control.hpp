#ifndef MFC_CONTROL_HPP
#define MFC_CONTROL_HPP

#include <functional>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "mfc/errors.hpp"
#include "mfc/time_grid.hpp"

namespace mfc {

struct AdjointSample;  // adjoint.hpp

/// Open-loop table of regular control values: one value per step, either
/// common across particles (values.size() == M) or per particle (N*M).
struct OpenLoopControl {
    std::vector<double> values;
    int N = 0;  // 0 for a common table
    int M = 0;

    static OpenLoopControl common(std::vector<double> per_step);
    static OpenLoopControl per_particle(std::vector<double> table, int N, int M);

    double at(int n, int k) const {
        return N == 0 ? values[static_cast<std::size_t>(k)]
                      : values[static_cast<std::size_t>(n) * M + k];
    }
    bool is_common() const { return N == 0; }
};

/// Feedback rule u(t, x, mu, regime[, p]); p is supplied when the rule was
/// derived from the maximum principle and an aligned adjoint solve is
/// attached. Outputs are clamped to A1 by the simulator.
struct FeedbackControl {
    std::function<double(double t, double x, double mu, int regime, std::optional<double> p)> rule;
    /// Optional per-(particle, step) p values from a previous solve on an
    /// ensemble with the same (N, grid, seed); see adjoint.hpp.
    std::shared_ptr<const AdjointSample> p_source;
};

/// A lump increment of the singular control. `size` applies to every
/// particle unless `per_particle` (length N) is set. Atoms at time <= 0 are
/// treated as occurring just after time zero (xi(0) = 0 by convention).
struct SingularAtom {
    double time = 0.0;
    double size = 0.0;
    std::vector<double> per_particle;

    double size_for(int n) const {
        return per_particle.empty() ? size : per_particle[static_cast<std::size_t>(n)];
    }
};

struct SingularControl {
    std::vector<SingularAtom> atoms;   // time-sorted
    std::vector<double> density;       // optional per-step rate, size M

    bool empty() const { return atoms.empty() && density.empty(); }
    void validate(double T) const;

    /// Total common mass (atom sizes plus integrated density); per-particle
    /// atoms contribute their maximum size.
    double total_mass(double h) const;
};

struct ControlPair {
    std::variant<OpenLoopControl, FeedbackControl> regular;
    SingularControl singular;

    static ControlPair zero() { return ControlPair{OpenLoopControl{{0.0}, 0, 0}, {}}; }
    static ControlPair open_loop(std::vector<double> per_step) {
        return ControlPair{OpenLoopControl::common(std::move(per_step)), {}};
    }
    static ControlPair feedback(FeedbackControl f) { return ControlPair{std::move(f), {}}; }

    bool is_feedback() const { return std::holds_alternative<FeedbackControl>(regular); }
};

}  // namespace mfc

#endif
