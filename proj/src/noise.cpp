#include "magic/noise.hpp"

#include <cmath>
#include <random>

namespace magic {

void DoseModel::validate() const {
  if (!(incident_photons > 0.0) || !std::isfinite(incident_photons))
    throw ConfigError("noise: incident photon count must be > 0");
  if (!(electronic_variance >= 0.0) || !std::isfinite(electronic_variance))
    throw ConfigError("noise: electronic variance must be >= 0");
}

DoseModel DoseModel::preset(const std::string& name, std::uint64_t seed) {
  DoseModel m;
  m.electronic_variance = 10.0;
  m.seed = seed;
  if (name == "100%")
    m.incident_photons = 1e6;
  else if (name == "10%")
    m.incident_photons = 1e5;
  else if (name == "5%")
    m.incident_photons = 5e4;
  else if (name == "2.5%")
    m.incident_photons = 2.5e4;
  else
    throw ConfigError("unknown dose preset '" + name + "' (expected 100%, 10%, 5% or 2.5%)");
  return m;
}

Sinogram simulate_lowdose(const Sinogram& clean, const DoseModel& model) {
  model.validate();
  const Matrix& yhat = clean.values;
  for (Eigen::Index i = 0; i < yhat.size(); ++i) {
    const double v = yhat.data()[i];
    if (!std::isfinite(v) || v < 0.0)
      throw InputError("simulate_lowdose: clean line integrals must be finite and >= 0 (bin " +
                       std::to_string(i) + " is " + std::to_string(v) + ")");
  }
  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> electronic(0.0, std::sqrt(model.electronic_variance));
  const double i0 = model.incident_photons;
  Sinogram out(clean.views(), clean.detectors());
  for (Eigen::Index i = 0; i < yhat.size(); ++i) {
    const double mean = i0 * std::exp(-yhat.data()[i]);
    double counts = 0.0;
    if (mean > 0.0) {
      std::poisson_distribution<long long> photons(mean);
      counts = static_cast<double>(photons(rng));
    }
    if (model.electronic_variance > 0.0) counts += electronic(rng);
    out.values.data()[i] = std::log(i0 / std::max(kMinCount, counts));
  }
  return out;
}

}  // namespace magic
