#ifndef MFC_CSV_HPP
#define MFC_CSV_HPP

#include <filesystem>
#include <string>

#include "mfc/adjoint.hpp"
#include "mfc/forward_sim.hpp"
#include "mfc/oracle.hpp"

namespace mfc {

/// Doubles are printed with %.17g so reruns are byte-identical.
std::string format_double(double v);

void write_ensemble_csv(const std::filesystem::path& file, const ParticleEnsemble& ensemble);
void write_summary_csv(const std::filesystem::path& file, const ParticleEnsemble& ensemble);
void write_jumps_csv(const std::filesystem::path& file, const ParticleEnsemble& ensemble);
void write_adjoint_csv(const std::filesystem::path& file, const AdjointSample& adjoint);
void write_riccati_csv(const std::filesystem::path& file, const TimeGrid& grid,
                       const std::vector<double>& eta);
void write_brute_force_csv(const std::filesystem::path& file, const BruteForceResult& result);

}  // namespace mfc

#endif
