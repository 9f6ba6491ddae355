#include "magic/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace magic {

std::vector<std::string> ScanGeometry::violations() const {
  std::vector<std::string> out;
  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) out.push_back(std::string(name) + " must be > 0");
  };
  positive(source_to_center, "geometry.source_to_center");
  positive(detector_to_center, "geometry.detector_to_center");
  positive(detector_pitch, "geometry.detector_pitch");
  positive(pixel_size, "geometry.pixel_size");
  if (n_detectors < 1) out.push_back("geometry.n_detectors must be >= 1");
  if (n_views < 1) out.push_back("geometry.n_views must be >= 1");
  if (image_rows < 1) out.push_back("geometry.image_rows must be >= 1");
  if (image_cols < 1) out.push_back("geometry.image_cols must be >= 1");
  if (!(angular_span > 0.0 && angular_span <= 2.0 * std::numbers::pi + 1e-12))
    out.push_back("geometry.angular_span must lie in (0, 2*pi]");
  if (!out.empty()) return out;

  const double half_w = 0.5 * pixel_size * std::max(image_rows, image_cols);
  const double half_diag = 0.5 * pixel_size * std::hypot(image_rows, image_cols);
  if (source_to_center <= half_diag)
    out.push_back("geometry.source_to_center must place the source outside the image grid");
  const double half_fan = 0.5 * n_detectors * fan_step();
  const double covered = half_fan >= 0.5 * std::numbers::pi ? source_to_center
                                                              : source_to_center * std::sin(half_fan);
  if (covered + 1e-9 < half_w)
    out.push_back("geometry: detector arc covers a radius of " + std::to_string(covered) +
                  " mm but the image half-width is " + std::to_string(half_w) + " mm");
  return out;
}

void ScanGeometry::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = v.front();
  for (std::size_t i = 1; i < v.size(); ++i) msg += "; " + v[i];
  throw ConfigError(msg);
}

ScanGeometry ScanGeometry::clinical() {
  ScanGeometry g;
  g.source_to_center = 250.0;
  g.detector_to_center = 250.0;
  g.n_detectors = 512;
  g.detector_pitch = 0.72;
  g.n_views = 1024;
  g.angular_span = 2.0 * std::numbers::pi;
  g.image_rows = 256;
  g.image_cols = 256;
  g.pixel_size = 0.6641;
  return g;
}

ScanGeometry ScanGeometry::desk(int size, int views) {
  const ScanGeometry c = clinical();
  ScanGeometry g = c;
  g.image_rows = size;
  g.image_cols = size;
  g.pixel_size = c.pixel_size * c.image_rows / size;
  g.n_detectors = 2 * size;
  g.detector_pitch = c.detector_pitch * c.n_detectors / g.n_detectors;
  g.n_views = views;
  return g;
}

Projector::Projector(const ScanGeometry& geom, std::size_t cache_budget_bytes) : geom_(geom) {
  geom_.validate();
  const int nv = geom_.n_views;
  const int nd = geom_.n_detectors;
  const double dg = geom_.fan_step();
  src_x_.resize(nv);
  src_y_.resize(nv);
  row_mode_.resize(nv);
  path_length_.resize(static_cast<std::size_t>(nv) * nd);
  for (int v = 0; v < nv; ++v) {
    const double beta = geom_.view_angle(v);
    src_x_[v] = geom_.source_to_center * std::cos(beta);
    src_y_[v] = geom_.source_to_center * std::sin(beta);
    row_mode_[v] = std::abs(src_y_[v]) >= std::abs(src_x_[v]);
    const double cx = -src_x_[v] / geom_.source_to_center;
    const double cy = -src_y_[v] / geom_.source_to_center;
    for (int j = 0; j < nd; ++j) {
      const double g = geom_.detector_angle(j);
      const double ux = cx * std::cos(g) - cy * std::sin(g);
      const double uy = cx * std::sin(g) + cy * std::cos(g);
      const double axial = row_mode_[v] ? std::abs(uy) : std::abs(ux);
      path_length_[static_cast<std::size_t>(v) * nd + j] = geom_.pixel_size / axial;
    }
  }
  det_edges_.resize(nd + 1);
  for (int k = 0; k <= nd; ++k) det_edges_[k] = (k - 0.5 * nd) * dg;

  // Edge angles along a line run one way for the whole view; the caches and
  // scratch buffers hold them in ascending order.
  descending_.resize(nv);
  {
    std::vector<double> raw;
    for (int v = 0; v < nv; ++v) {
      raw.resize(line_length(v) + 1);
      compute_raw_edges(v, 0, raw.data());
      descending_[v] = raw.back() < raw.front();
    }
  }

  std::size_t total = 0;
  cache_offset_.resize(static_cast<std::size_t>(nv) + 1);
  for (int v = 0; v < nv; ++v) {
    cache_offset_[v] = total;
    total += static_cast<std::size_t>(line_count(v)) * (line_length(v) + 1);
  }
  cache_offset_[nv] = total;
  if (total * sizeof(double) <= cache_budget_bytes) {
    edge_cache_.resize(total);
    for (int v = 0; v < nv; ++v) {
      const int len = line_length(v) + 1;
      for (int l = 0; l < line_count(v); ++l)
        compute_edges(v, l, edge_cache_.data() + cache_offset_[v] + static_cast<std::size_t>(l) * len);
    }
  }
}

int Projector::line_count(int view) const { return rows_mode(view) ? geom_.image_rows : geom_.image_cols; }

int Projector::line_length(int view) const { return rows_mode(view) ? geom_.image_cols : geom_.image_rows; }

// Fan angles of the pixel edges along one swept line, relative to the central ray.
void Projector::compute_raw_edges(int view, int line, double* out) const {
  const double sx = src_x_[view];
  const double sy = src_y_[view];
  const double cx = -sx / geom_.source_to_center;
  const double cy = -sy / geom_.source_to_center;
  const double d = geom_.pixel_size;
  const int m = geom_.image_rows;
  const int n = geom_.image_cols;
  const int len = line_length(view);
  for (int b = 0; b <= len; ++b) {
    double px, py;
    if (rows_mode(view)) {
      px = (b - 0.5 * n) * d;
      py = (0.5 * (m - 1) - line) * d;
    } else {
      px = (line - 0.5 * (n - 1)) * d;
      py = (0.5 * m - b) * d;
    }
    const double vx = px - sx;
    const double vy = py - sy;
    out[b] = std::atan2(cx * vy - cy * vx, cx * vx + cy * vy);
  }
}

void Projector::compute_edges(int view, int line, double* out) const {
  compute_raw_edges(view, line, out);
  if (descending_[view]) std::reverse(out, out + line_length(view) + 1);
}

const double* Projector::edges(int view, int line, std::vector<double>& scratch) const {
  const int len = line_length(view) + 1;
  if (!edge_cache_.empty()) return edge_cache_.data() + cache_offset_[view] + static_cast<std::size_t>(line) * len;
  scratch.resize(len);
  compute_edges(view, line, scratch.data());
  return scratch.data();
}

template <class Fn>
void Projector::visit_view(int view, std::vector<double>& scratch, Fn&& fn) const {
  const int nd = geom_.n_detectors;
  const double inv_dg = 1.0 / geom_.fan_step();
  const double* det = det_edges_.data();
  const double* path = path_length_.data() + static_cast<std::size_t>(view) * nd;
  const bool by_rows = rows_mode(view);
  const int len = line_length(view);
  // Interval k of the ascending edges is pixel first + k * stride.
  const int first = descending_[view] ? len - 1 : 0;
  const int stride = descending_[view] ? -1 : 1;
  for (int line = 0; line < line_count(view); ++line) {
    const double* a = edges(view, line, scratch);
    int i = 0;
    int j = 0;
    double lo;
    if (a[0] < det[0]) {
      lo = det[0];
      i = static_cast<int>(std::upper_bound(a + 1, a + len + 1, lo) - (a + 1));
    } else {
      lo = a[0];
      j = static_cast<int>(std::upper_bound(det + 1, det + nd + 1, lo) - (det + 1));
    }
    while (i < len && j < nd) {
      const double pe = a[i + 1];
      const double de = det[j + 1];
      const double hi = pe < de ? pe : de;
      if (hi > lo) {
        const double w = (hi - lo) * inv_dg * path[j];
        const int p = first + stride * i;
        if (by_rows)
          fn(line, p, j, w);
        else
          fn(p, line, j, w);
      }
      lo = hi;
      i += pe <= de;
      j += de <= pe;
    }
  }
}

void Projector::forward(const Matrix& img, Matrix& sino) const {
  if (img.rows() != geom_.image_rows || img.cols() != geom_.image_cols)
    throw ConfigError("forward_project: image is " + std::to_string(img.rows()) + "x" +
                      std::to_string(img.cols()) + " but geometry expects " +
                      std::to_string(geom_.image_rows) + "x" + std::to_string(geom_.image_cols));
  sino.setZero(geom_.n_views, geom_.n_detectors);
  parallel_for(0, geom_.n_views, [&](int v) {
    std::vector<double> scratch;
    double* row = sino.row(v).data();
    visit_view(v, scratch, [&](int r, int c, int j, double w) { row[j] += w * img(r, c); });
  });
}

void Projector::back(const Matrix& sino, Matrix& img) const {
  if (sino.rows() != geom_.n_views || sino.cols() != geom_.n_detectors)
    throw ConfigError("back_project: sinogram is " + std::to_string(sino.rows()) + "x" +
                      std::to_string(sino.cols()) + " but geometry expects " +
                      std::to_string(geom_.n_views) + "x" + std::to_string(geom_.n_detectors));
  img.setZero(geom_.image_rows, geom_.image_cols);
  // Split over bands of image rows; every pixel accumulates views in order,
  // so the result is independent of the band count.
  const int bands = std::min(num_threads(), geom_.image_rows);
  parallel_for(0, bands, [&](int b) {
    const int r0 = geom_.image_rows * b / bands;
    const int r1 = geom_.image_rows * (b + 1) / bands;
    std::vector<double> scratch;
    for (int v = 0; v < geom_.n_views; ++v) {
      const double* row = sino.row(v).data();
      visit_view(v, scratch, [&](int r, int c, int j, double w) {
        if (r >= r0 && r < r1) img(r, c) += w * row[j];
      });
    }
  });
}

Sinogram Projector::forward(const ImageGrid& img) const {
  Sinogram out;
  forward(img.values, out.values);
  return out;
}

ImageGrid Projector::back(const Sinogram& sino) const {
  ImageGrid out;
  back(sino.values, out.values);
  return out;
}

double Projector::normal_operator_norm(int iterations, double tolerance) const {
  Matrix x = Matrix::Constant(geom_.image_rows, geom_.image_cols, 1.0);
  x /= x.norm();
  Matrix s, y;
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    forward(x, s);
    back(s, y);
    const double next = y.norm();
    if (next == 0.0) return 0.0;
    x = y / next;
    const bool done = std::abs(next - lambda) <= tolerance * next;
    lambda = next;
    if (done) break;
  }
  return lambda;
}

Sinogram forward_project(const ImageGrid& img, const ScanGeometry& geom) {
  if (!img.matches(geom)) throw ConfigError("forward_project: image does not match geometry");
  return Projector(geom).forward(img);
}

ImageGrid back_project(const Sinogram& sino, const ScanGeometry& geom) {
  if (!sino.matches(geom)) throw ConfigError("back_project: sinogram does not match geometry");
  return Projector(geom).back(sino);
}

}  // namespace magic
