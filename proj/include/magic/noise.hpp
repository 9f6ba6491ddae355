#pragma once

#include "magic/geometry.hpp"

#include <cstdint>
#include <string>

namespace magic {

struct DoseModel {
  double incident_photons = 1e5;       // I0
  double electronic_variance = 10.0;   // sigma_e^2, counts^2
  std::uint64_t seed = 0;

  void validate() const;

  // "100%", "10%", "5%", "2.5%" relative to a 1e6-photon normal dose.
  static DoseModel preset(const std::string& name, std::uint64_t seed = 0);
};

// Counts below this are clamped before the logarithm.
inline constexpr double kMinCount = 1.0;

// y = ln(I0 / max(kMinCount, Poisson(I0 exp(-yhat)) + Normal(0, sigma_e^2))),
// drawn in row-major bin order from a generator seeded with model.seed.
Sinogram simulate_lowdose(const Sinogram& clean, const DoseModel& model);

}  // namespace magic
