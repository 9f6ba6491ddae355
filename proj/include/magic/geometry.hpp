#pragma once

#include "magic/common.hpp"

#include <string>
#include <vector>

namespace magic {

// Fan-beam acquisition with an equiangular arc detector centred on the
// source. Lengths in mm, angles in radians. View v sits at angle
// v * angular_span / n_views.
struct ScanGeometry {
  double source_to_center = 250.0;
  double detector_to_center = 250.0;
  int n_detectors = 128;
  double detector_pitch = 2.88;
  int n_views = 180;
  double angular_span = 2.0 * 3.14159265358979323846;
  int image_rows = 64;
  int image_cols = 64;
  double pixel_size = 2.6564;

  // Throws ConfigError listing every violated invariant.
  void validate() const;
  std::vector<std::string> violations() const;

  double source_to_detector() const { return source_to_center + detector_to_center; }
  double fan_step() const { return detector_pitch / source_to_detector(); }
  double view_angle(int v) const { return angular_span * v / n_views; }
  // Fan angle of the centre of detector j.
  double detector_angle(int j) const { return (j - 0.5 * (n_detectors - 1)) * fan_step(); }

  // 256^2 grid, 1024 views over 360 degrees, 512 detectors of 0.72 mm.
  static ScanGeometry clinical();
  // Same field of view resampled onto a size x size grid with `views` views.
  static ScanGeometry desk(int size = 64, int views = 180);
};

// Attenuation image, m x n, row 0 at the top.
struct ImageGrid {
  Matrix values;

  ImageGrid() = default;
  explicit ImageGrid(Matrix v) : values(std::move(v)) {}
  ImageGrid(int rows, int cols) : values(Matrix::Zero(rows, cols)) {}
  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  bool matches(const ScanGeometry& g) const { return rows() == g.image_rows && cols() == g.image_cols; }
};

// Line integrals, n_views x n_detectors.
struct Sinogram {
  Matrix values;

  Sinogram() = default;
  explicit Sinogram(Matrix v) : values(std::move(v)) {}
  Sinogram(int views, int detectors) : values(Matrix::Zero(views, detectors)) {}
  int views() const { return static_cast<int>(values.rows()); }
  int detectors() const { return static_cast<int>(values.cols()); }
  bool matches(const ScanGeometry& g) const { return views() == g.n_views && detectors() == g.n_detectors; }
};

// Distance-driven fan-beam projector and its exact transpose.
//
// For each view the image is swept along the axis most perpendicular to the
// central ray (rows when the source sits closer to the y axis, columns
// otherwise). Pixel edges on each swept line are mapped to fan angles and
// overlapped with the detector cells; the overlap fraction times the path
// length through the line slab is the system weight. Forward and back
// projection enumerate the same weights in the same order, so the pair is
// adjoint to rounding error. The system matrix is never stored; only the
// edge angles are cached when they fit the cache budget.
class Projector {
 public:
  explicit Projector(const ScanGeometry& geom, std::size_t cache_budget_bytes = 64u << 20);

  const ScanGeometry& geometry() const { return geom_; }

  Sinogram forward(const ImageGrid& img) const;
  ImageGrid back(const Sinogram& sino) const;

  // Raw variants on m x n and views x detectors matrices. Output is overwritten.
  void forward(const Matrix& img, Matrix& sino) const;
  void back(const Matrix& sino, Matrix& img) const;

  // Power-iteration estimate of the largest eigenvalue of A^T A.
  double normal_operator_norm(int iterations = 30, double tolerance = 1e-6) const;

  bool edge_cache_enabled() const { return !edge_cache_.empty(); }

 private:
  bool rows_mode(int view) const { return row_mode_[view] != 0; }
  int line_count(int view) const;
  int line_length(int view) const;
  void compute_raw_edges(int view, int line, double* out) const;
  void compute_edges(int view, int line, double* out) const;
  const double* edges(int view, int line, std::vector<double>& scratch) const;

  // Calls fn(row, col, det, weight) for every nonzero weight of `view`.
  template <class Fn>
  void visit_view(int view, std::vector<double>& scratch, Fn&& fn) const;

  ScanGeometry geom_;
  std::vector<double> src_x_, src_y_;   // per view
  std::vector<char> row_mode_;          // per view
  std::vector<char> descending_;        // per view
  std::vector<double> path_length_;     // per view x detector
  std::vector<double> det_edges_;       // n_detectors + 1 fan angles
  std::vector<double> edge_cache_;      // per view x line x (length + 1)
  std::vector<std::size_t> cache_offset_;
};

Sinogram forward_project(const ImageGrid& img, const ScanGeometry& geom);
ImageGrid back_project(const Sinogram& sino, const ScanGeometry& geom);

}  // namespace magic
