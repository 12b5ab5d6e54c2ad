#ifndef MFC_TIME_GRID_HPP
#define MFC_TIME_GRID_HPP

#include <cmath>

#include "mfc/errors.hpp"

namespace mfc {

/// Uniform grid 0 = t_0 < t_1 < ... < t_M = T with step h = T/M.
struct TimeGrid {
    double T = 1.0;
    int M = 1;
    double h = 1.0;

    static TimeGrid uniform(double T, int M) {
        if (!(T > 0.0) || M < 1) throw ValidationError("TimeGrid: need T > 0 and M >= 1");
        TimeGrid g;
        g.T = T;
        g.M = M;
        g.h = T / static_cast<double>(M);
        return g;
    }

    /// t_k, exact at both endpoints.
    double t(int k) const { return T * static_cast<double>(k) / static_cast<double>(M); }

    /// Step index k with t_k < tau <= t_{k+1}; atoms at tau <= 0 map to step 0.
    int step_of(double tau) const {
        const double pos = tau * static_cast<double>(M) / T;
        int k = static_cast<int>(std::ceil(pos)) - 1;
        if (k < 0) k = 0;
        if (k > M - 1) k = M - 1;
        return k;
    }

    bool operator==(const TimeGrid& o) const { return T == o.T && M == o.M; }
};

}  // namespace mfc

#endif
