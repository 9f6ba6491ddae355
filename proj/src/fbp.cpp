#include "magic/fbp.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <vector>

namespace magic {

namespace {

// FFTW's planner is not reentrant.
std::mutex g_plan_mutex;

int next_pow2(int v) {
  int p = 1;
  while (p < v) p <<= 1;
  return p;
}

struct RealFft {
  int size;
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  explicit RealFft(int n) : size(n) {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    real = fftw_alloc_real(n);
    spec = fftw_alloc_complex(n / 2 + 1);
    fwd = fftw_plan_dft_r2c_1d(n, real, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(n, spec, real, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(real);
    fftw_free(spec);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
};

// Spectrum of the band-limited equiangular ramp kernel
//   g(n) = 1/(8 dg^2)                      n = 0
//        = 0                               n even
//        = -1 / (2 pi^2 sin^2(n dg))       n odd
// laid out circularly over the padded length, times the detector spacing.
std::vector<std::complex<double>> kernel_spectrum(int nd, int padded, double dg, FbpFilter filter) {
  RealFft fft(padded);
  for (int i = 0; i < padded; ++i) fft.real[i] = 0.0;
  for (int k = -(nd - 1); k <= nd - 1; ++k) {
    double g;
    if (k == 0) {
      g = 1.0 / (8.0 * dg * dg);
    } else if (k % 2 == 0) {
      g = 0.0;
    } else {
      const double s = std::sin(k * dg);
      g = -1.0 / (2.0 * std::numbers::pi * std::numbers::pi * s * s);
    }
    fft.real[(k + padded) % padded] = g * dg;
  }
  fftw_execute(fft.fwd);
  const int half = padded / 2;
  std::vector<std::complex<double>> h(half + 1);
  for (int f = 0; f <= half; ++f) {
    std::complex<double> v(fft.spec[f][0], fft.spec[f][1]);
    if (filter == FbpFilter::Hann) v *= 0.5 * (1.0 + std::cos(std::numbers::pi * f / half));
    h[f] = v;
  }
  return h;
}

}  // namespace

FbpFilter parse_fbp_filter(const std::string& name) {
  if (name == "ramp") return FbpFilter::Ramp;
  if (name == "hann" || name == "hann-windowed-ramp") return FbpFilter::Hann;
  throw ConfigError("unknown FBP filter '" + name + "' (expected ramp or hann)");
}

std::string to_string(FbpFilter f) { return f == FbpFilter::Ramp ? "ramp" : "hann"; }

ImageGrid fbp_reconstruct(const Sinogram& sino, const ScanGeometry& geom, FbpFilter filter) {
  geom.validate();
  if (geom.n_detectors < 2) throw ConfigError("fbp_reconstruct: needs at least 2 detectors");
  if (!sino.matches(geom)) throw ConfigError("fbp_reconstruct: sinogram does not match geometry");
  const int nv = geom.n_views;
  const int nd = geom.n_detectors;
  const double dg = geom.fan_step();
  const double dso = geom.source_to_center;
  const int padded = next_pow2(2 * nd - 1);
  const auto h = kernel_spectrum(nd, padded, dg, filter);

  std::vector<double> cos_w(nd);
  for (int j = 0; j < nd; ++j) cos_w[j] = dso * std::cos(geom.detector_angle(j));

  Matrix filtered(nv, nd);
  {
    RealFft fft(padded);
    for (int v = 0; v < nv; ++v) {
      for (int i = 0; i < padded; ++i) fft.real[i] = 0.0;
      for (int j = 0; j < nd; ++j) fft.real[j] = sino.values(v, j) * cos_w[j];
      fftw_execute_dft_r2c(fft.fwd, fft.real, fft.spec);
      for (int f = 0; f <= padded / 2; ++f) {
        const std::complex<double> s(fft.spec[f][0], fft.spec[f][1]);
        const auto p = s * h[f];
        fft.spec[f][0] = p.real();
        fft.spec[f][1] = p.imag();
      }
      fftw_execute_dft_c2r(fft.inv, fft.spec, fft.real);
      for (int j = 0; j < nd; ++j) filtered(v, j) = fft.real[j] / padded;
    }
  }

  const int m = geom.image_rows;
  const int n = geom.image_cols;
  const double d = geom.pixel_size;
  const double dbeta = geom.angular_span / nv;
  // Partial scans get the full-scan normalisation, no redundancy weights.
  const double coverage = 2.0 * std::numbers::pi / geom.angular_span;
  std::vector<double> sx(nv), sy(nv);
  for (int v = 0; v < nv; ++v) {
    sx[v] = dso * std::cos(geom.view_angle(v));
    sy[v] = dso * std::sin(geom.view_angle(v));
  }
  ImageGrid out(m, n);
  parallel_for(0, m, [&](int r) {
    const double py = (0.5 * (m - 1) - r) * d;
    for (int c = 0; c < n; ++c) {
      const double px = (c - 0.5 * (n - 1)) * d;
      double acc = 0.0;
      for (int v = 0; v < nv; ++v) {
        const double cx = -sx[v] / dso;
        const double cy = -sy[v] / dso;
        const double vx = px - sx[v];
        const double vy = py - sy[v];
        const double l2 = vx * vx + vy * vy;
        const double gamma = std::atan2(cx * vy - cy * vx, cx * vx + cy * vy);
        const double t = gamma / dg + 0.5 * (nd - 1);
        const int j = static_cast<int>(std::floor(t));
        if (j < 0 || j + 1 >= nd) {
          if (j == nd - 1 && t <= nd - 1) acc += filtered(v, j) / l2;
          continue;
        }
        const double frac = t - j;
        acc += ((1.0 - frac) * filtered(v, j) + frac * filtered(v, j + 1)) / l2;
      }
      out.values(r, c) = acc * dbeta * coverage;
    }
  });
  return out;
}

}  // namespace magic
