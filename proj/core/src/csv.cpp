#include "mfc/csv.hpp"

#include <cstdio>
#include <fstream>

namespace mfc {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);  // binary keeps newlines stable
    if (!out) throw Error("cannot open output file: " + file.string());
    return out;
}

}  // namespace

void write_ensemble_csv(const std::filesystem::path& file, const ParticleEnsemble& ens) {
    auto out = open_out(file);
    out << "particle,step,t,X,regime\n";
    for (int n = 0; n < ens.N; ++n)
        for (int k = 0; k <= ens.grid.M; ++k)
            out << n << ',' << k << ',' << format_double(ens.grid.t(k)) << ','
                << format_double(ens.x(n, k)) << ',' << ens.regime(n, k) << '\n';
}

void write_summary_csv(const std::filesystem::path& file, const ParticleEnsemble& ens) {
    auto out = open_out(file);
    out << "t,mu,mean_x,var_x\n";
    for (int k = 0; k <= ens.grid.M; ++k) {
        double mean = 0.0;
        for (int n = 0; n < ens.N; ++n) mean += ens.x(n, k);
        mean /= static_cast<double>(ens.N);
        double var = 0.0;
        for (int n = 0; n < ens.N; ++n) {
            const double d = ens.x(n, k) - mean;
            var += d * d;
        }
        var /= std::max(1, ens.N - 1);
        out << format_double(ens.grid.t(k)) << ',' << format_double(ens.mu(k)) << ','
            << format_double(mean) << ',' << format_double(var) << '\n';
    }
}

void write_jumps_csv(const std::filesystem::path& file, const ParticleEnsemble& ens) {
    auto out = open_out(file);
    out << "particle,time,from,to\n";
    for (int n = 0; n < ens.N; ++n)
        for (const auto& j : ens.regimes[static_cast<std::size_t>(n)].jumps)
            out << n << ',' << format_double(j.time) << ',' << j.from << ',' << j.to << '\n';
}

void write_adjoint_csv(const std::filesystem::path& file, const AdjointSample& adj) {
    auto out = open_out(file);
    out << "particle,step,p,q";
    for (int j = 1; j <= adj.D; ++j) out << ",s_" << j;
    out << '\n';
    for (int n = 0; n < adj.N; ++n)
        for (int k = 0; k <= adj.grid.M; ++k) {
            out << n << ',' << k << ',' << format_double(adj.p_at(n, k)) << ','
                << format_double(adj.q_at(n, k));
            for (int j = 1; j <= adj.D; ++j) out << ',' << format_double(adj.s_at(n, k, j));
            out << '\n';
        }
}

void write_riccati_csv(const std::filesystem::path& file, const TimeGrid& grid,
                       const std::vector<double>& eta) {
    auto out = open_out(file);
    out << "t,eta\n";
    for (int k = 0; k <= grid.M; ++k)
        out << format_double(grid.t(k)) << ',' << format_double(eta[static_cast<std::size_t>(k)])
            << '\n';
}

void write_brute_force_csv(const std::filesystem::path& file, const BruteForceResult& result) {
    auto out = open_out(file);
    out << "control_id,u_sequence,atoms,J,SE\n";
    for (const auto& row : result.table) {
        out << row.id << ',';
        for (std::size_t i = 0; i < row.u.size(); ++i) {
            if (i) out << '|';
            out << format_double(row.u[i]);
        }
        out << ',';
        for (std::size_t i = 0; i < row.atom_choice.size(); ++i) {
            if (i) out << '|';
            out << format_double(row.atom_choice[i]);
        }
        out << ',' << format_double(row.J) << ',' << format_double(row.SE) << '\n';
    }
}

}  // namespace mfc
