#pragma once

// Reference computations used by the tests. They follow the same coordinate
// conventions as the library but share none of its code paths.

#include "magic/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using magic::Matrix;
using magic::ScanGeometry;

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

struct Point {
  double x, y;
};

inline Point source(const ScanGeometry& g, int view) {
  const double beta = g.angular_span * view / g.n_views;
  return {g.source_to_center * std::cos(beta), g.source_to_center * std::sin(beta)};
}

// Unit direction of the ray at fan angle gamma (counter-clockwise from the
// central ray, which points from the source to the rotation centre).
inline Point direction(const ScanGeometry& g, int view, double gamma) {
  const Point s = source(g, view);
  const double cx = -s.x / g.source_to_center, cy = -s.y / g.source_to_center;
  return {cx * std::cos(gamma) - cy * std::sin(gamma), cx * std::sin(gamma) + cy * std::cos(gamma)};
}

// Pixel-constant lookup; zero outside the grid.
inline double sample(const Matrix& img, const ScanGeometry& g, double x, double y) {
  const double c = x / g.pixel_size + 0.5 * g.image_cols;
  const double r = 0.5 * g.image_rows - y / g.pixel_size;
  if (c < 0.0 || r < 0.0) return 0.0;
  const int ci = static_cast<int>(c), ri = static_cast<int>(r);
  if (ci >= g.image_cols || ri >= g.image_rows) return 0.0;
  return img(ri, ci);
}

// Dense ray marching from the source along fan angle gamma.
inline double march(const Matrix& img, const ScanGeometry& g, int view, double gamma, int steps_per_pixel = 200) {
  const Point s = source(g, view);
  const Point u = direction(g, view, gamma);
  const double h = g.pixel_size / steps_per_pixel;
  const double length = 2.0 * g.source_to_center;
  double acc = 0.0;
  for (double t = 0.5 * h; t < length; t += h) acc += sample(img, g, s.x + t * u.x, s.y + t * u.y);
  return acc * h;
}

// Detector-cell average of marched line integrals.
inline double detector_value(const Matrix& img, const ScanGeometry& g, int view, int det, int subrays = 8,
                             int steps_per_pixel = 200) {
  const double dg = g.detector_pitch / (g.source_to_center + g.detector_to_center);
  const double centre = (det - 0.5 * (g.n_detectors - 1)) * dg;
  double acc = 0.0;
  for (int k = 0; k < subrays; ++k) acc += march(img, g, view, centre + ((k + 0.5) / subrays - 0.5) * dg, steps_per_pixel);
  return acc / subrays;
}

// Fan angle of a point as seen from the source of `view`.
inline double fan_angle(const ScanGeometry& g, int view, double x, double y) {
  const Point s = source(g, view);
  const double cx = -s.x / g.source_to_center, cy = -s.y / g.source_to_center;
  const double vx = x - s.x, vy = y - s.y;
  return std::atan2(cx * vy - cy * vx, cx * vx + cy * vy);
}

// True when the square of pixel (r, c) meets the fan wedge of detector `det`.
// The source lies outside the square, so the square's angular extent is
// spanned by its corners.
inline bool pixel_meets_detector(const ScanGeometry& g, int view, int det, int r, int c) {
  const double dg = g.detector_pitch / (g.source_to_center + g.detector_to_center);
  const double lo = (det - 0.5 * g.n_detectors) * dg;
  const double hi = lo + dg;
  double amin = 1e9, amax = -1e9;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const double x = (c + dx - 0.5 * g.image_cols) * g.pixel_size;
      const double y = (0.5 * g.image_rows - r - dy) * g.pixel_size;
      const double a = fan_angle(g, view, x, y);
      amin = std::min(amin, a);
      amax = std::max(amax, a);
    }
  return amax > lo && amin < hi;
}

// Binary disc of radius `radius` mm about the origin (pixel centres inside).
inline Matrix disc(const ScanGeometry& g, double radius, double value = 1.0) {
  Matrix img = Matrix::Zero(g.image_rows, g.image_cols);
  for (int r = 0; r < g.image_rows; ++r)
    for (int c = 0; c < g.image_cols; ++c) {
      const double x = (c - 0.5 * (g.image_cols - 1)) * g.pixel_size;
      const double y = (0.5 * (g.image_rows - 1) - r) * g.pixel_size;
      if (x * x + y * y <= radius * radius) img(r, c) = value;
    }
  return img;
}

}  // namespace oracle
