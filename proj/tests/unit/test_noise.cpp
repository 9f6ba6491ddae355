#include "doctest.h"

#include "magic/noise.hpp"

#include <cmath>

using namespace magic;

TEST_CASE("dose presets") {
  CHECK(DoseModel::preset("10%").incident_photons == 1e5);
  CHECK(DoseModel::preset("5%").incident_photons == 5e4);
  CHECK(DoseModel::preset("2.5%").incident_photons == 2.5e4);
  CHECK(DoseModel::preset("100%").incident_photons == 1e6);
  CHECK(DoseModel::preset("5%").electronic_variance == 10.0);
  CHECK_THROWS_AS(DoseModel::preset("7%"), ConfigError);
  DoseModel bad;
  bad.incident_photons = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("same seed gives the same noise, different seeds differ") {
  Sinogram clean(Matrix::Constant(20, 30, 2.0));
  DoseModel m = DoseModel::preset("10%", 7);
  const auto a = simulate_lowdose(clean, m);
  const auto b = simulate_lowdose(clean, m);
  CHECK(a.values == b.values);
  m.seed = 8;
  CHECK(simulate_lowdose(clean, m).values != a.values);
}

TEST_CASE("noise statistics follow the count model") {
  // Var[ln(I0/N)] ~ (lambda + sigma_e^2) / lambda^2 with lambda = I0 exp(-yhat).
  const double yhat = 3.0;
  Sinogram clean(Matrix::Constant(200, 200, yhat));
  for (const char* name : {"10%", "5%", "2.5%"}) {
    const auto m = DoseModel::preset(name, 99);
    const auto y = simulate_lowdose(clean, m).values;
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() / (y.size() - 1);
    const double lambda = m.incident_photons * std::exp(-yhat);
    const double expected = (lambda + m.electronic_variance) / (lambda * lambda);
    CHECK(mean == doctest::Approx(yhat).epsilon(0.01));
    CHECK(var == doctest::Approx(expected).epsilon(0.05));
  }
}

TEST_CASE("lower dose means more noise") {
  Sinogram clean(Matrix::Constant(100, 100, 2.0));
  double prev = 0.0;
  for (const char* name : {"100%", "10%", "5%", "2.5%"}) {
    const auto y = simulate_lowdose(clean, DoseModel::preset(name, 1)).values;
    const double err = (y.array() - 2.0).square().mean();
    CHECK(err > prev);
    prev = err;
  }
}

TEST_CASE("photon starvation is clamped") {
  Sinogram clean(Matrix::Constant(10, 10, 60.0));
  const auto m = DoseModel::preset("2.5%", 3);
  const auto y = simulate_lowdose(clean, m).values;
  CHECK(y.allFinite());
  CHECK(y.maxCoeff() <= std::log(m.incident_photons / kMinCount) + 1e-12);
}

TEST_CASE("negative line integrals are rejected") {
  Sinogram clean(Matrix::Constant(4, 4, 1.0));
  clean.values(2, 3) = -0.5;
  CHECK_THROWS_AS(simulate_lowdose(clean, DoseModel{}), InputError);
}
