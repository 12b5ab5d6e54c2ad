#include "mfc/regime_chain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfc {

void GeneratorMatrix::validate() const {
    if (dim < 1) throw ValidationError("generator: dimension must be >= 1");
    if (rates.size() != static_cast<std::size_t>(dim) * dim)
        throw ValidationError("generator: rates must be a DxD matrix");
    for (int i = 0; i < dim; ++i) {
        double row_sum = 0.0;
        double scale = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double r = rate(i, j);
            if (!std::isfinite(r)) throw ValidationError("generator: non-finite rate");
            row_sum += r;
            scale = std::max(scale, std::abs(r));
            if (i != j && !(r > 0.0)) {
                std::ostringstream msg;
                msg << "generator: off-diagonal rate (" << i + 1 << "," << j + 1
                    << ") must be strictly positive, got " << r;
                throw ValidationError(msg.str());
            }
        }
        if (dim > 1 && !(rate(i, i) < 0.0)) {
            std::ostringstream msg;
            msg << "generator: diagonal entry (" << i + 1 << "," << i + 1
                << ") must be strictly negative";
            throw ValidationError(msg.str());
        }
        if (std::abs(row_sum) > 1e-12 * std::max(1.0, scale)) {
            std::ostringstream msg;
            msg << "generator: row " << i + 1 << " sums to " << row_sum << ", expected 0";
            throw ValidationError(msg.str());
        }
    }
}

RegimePath sample_regime_path(const GeneratorMatrix& gen, int initial, const TimeGrid& grid,
                              RngStream& rng) {
    gen.validate();
    if (initial < 1 || initial > gen.dim)
        throw ValidationError("sample_regime_path: initial state out of range");

    RegimePath path;
    path.grid = grid;
    path.jumps.clear();

    int state = initial;  // 1-based
    double t = 0.0;
    while (true) {
        const double exit_rate = -gen.rate(state - 1, state - 1);
        if (!(exit_rate > 0.0)) break;  // absorbing (only the D=1 case here)
        t += rng.next_exponential(exit_rate);
        if (t > grid.T) break;
        // embedded transition: e_j with probability rate(i,j)/exit_rate
        const double u = rng.next_uniform();
        double acc = 0.0;
        int next = -1;
        int last = -1;
        for (int j = 1; j <= gen.dim; ++j) {
            if (j == state) continue;
            last = j;
            acc += gen.rate(state - 1, j - 1) / exit_rate;
            if (u <= acc) {
                next = j;
                break;
            }
        }
        if (next < 0) next = last;  // rounding left u above the cumulative sum
        path.jumps.push_back(RegimeJump{t, state, next});
        state = next;
    }

    // restrict to the grid: state at t_k with the left-limit convention
    path.regime_index.assign(static_cast<std::size_t>(grid.M) + 1, initial);
    std::size_t jp = 0;
    int cur = initial;
    for (int k = 0; k <= grid.M; ++k) {
        const double tk = grid.t(k);
        while (jp < path.jumps.size() && path.jumps[jp].time < tk) {
            cur = path.jumps[jp].to;
            ++jp;
        }
        path.regime_index[static_cast<std::size_t>(k)] = cur;
    }
    return path;
}

RegimePath sample_regime_path(const GeneratorMatrix& gen, int initial, const TimeGrid& grid,
                              std::uint64_t seed, std::uint64_t particle) {
    RngStream rng(seed, particle, 0, RngChannel::chain);
    return sample_regime_path(gen, initial, grid, rng);
}

std::vector<double> occupation_times(const RegimePath& path, int step, int dim) {
    const TimeGrid& grid = path.grid;
    const double t0 = grid.t(step);
    const double t1 = grid.t(step + 1);
    std::vector<double> occ(static_cast<std::size_t>(dim), 0.0);

    // walk the exact trajectory over (t0, t1]; the chain is right-continuous
    int state = path.initial_state();
    double seg_start = 0.0;
    auto add = [&](double a, double b, int s) {
        const double lo = std::max(a, t0);
        const double hi = std::min(b, t1);
        if (hi > lo) occ[static_cast<std::size_t>(s - 1)] += hi - lo;
    };
    for (const auto& j : path.jumps) {
        if (j.time >= t1) break;
        add(seg_start, j.time, state);
        state = j.to;
        seg_start = j.time;
    }
    add(seg_start, grid.T, state);
    return occ;
}

JumpMartingaleIncrements compensated_increments(const RegimePath& path,
                                                const GeneratorMatrix& gen) {
    const TimeGrid& grid = path.grid;
    if (static_cast<int>(path.regime_index.size()) != grid.M + 1)
        throw ValidationError("compensated_increments: path/grid shape mismatch");
    for (const auto& j : path.jumps)
        if (j.from < 1 || j.from > gen.dim || j.to < 1 || j.to > gen.dim)
            throw ValidationError("compensated_increments: jump state outside generator dimension");

    JumpMartingaleIncrements inc;
    inc.dim = gen.dim;
    inc.steps = grid.M;
    inc.d_count.assign(static_cast<std::size_t>(grid.M) * gen.dim, 0.0);
    inc.d_comp.assign(static_cast<std::size_t>(grid.M) * gen.dim, 0.0);

    // jump counts per step: jump at tau belongs to (t_k, t_{k+1}] with k = step_of(tau)
    for (const auto& j : path.jumps) {
        const int k = grid.step_of(j.time);
        inc.d_count[static_cast<std::size_t>(k) * gen.dim + (j.to - 1)] += 1.0;
    }

    // compensators from exact occupation times: dzeta_j = sum_{i != j} zeta_ij occ_i
    for (int k = 0; k < grid.M; ++k) {
        const std::vector<double> occ = occupation_times(path, k, gen.dim);
        for (int j = 0; j < gen.dim; ++j) {
            double mass = 0.0;
            for (int i = 0; i < gen.dim; ++i) {
                if (i == j) continue;
                mass += gen.rate(i, j) * occ[static_cast<std::size_t>(i)];
            }
            inc.d_comp[static_cast<std::size_t>(k) * gen.dim + j] = mass;
        }
    }
    return inc;
}

}  // namespace mfc
