#include "magic/patchgraph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace magic {

std::vector<int> anchor_positions(int size, int patch, int step) {
  std::vector<int> out;
  const int last = size - patch;
  for (int a = 0; a <= last; a += step) out.push_back(a);
  if (out.back() != last) out.push_back(last);
  return out;
}

PatchLayout PatchLayout::make(int m, int n, int s1, int s2, int i0, int j0) {
  if (s1 < 1 || s2 < 1) throw ConfigError("patch size must be >= 1");
  if (s1 > m || s2 > n)
    throw ConfigError("patch " + std::to_string(s1) + "x" + std::to_string(s2) + " is larger than the " +
                      std::to_string(m) + "x" + std::to_string(n) + " image");
  if (i0 < 1 || i0 > s1 || j0 < 1 || j0 > s2)
    throw ConfigError("patch step must satisfy 1 <= step <= patch size so that patches overlap");
  PatchLayout l;
  l.patch_rows = s1;
  l.patch_cols = s2;
  l.step_rows = i0;
  l.step_cols = j0;
  l.image_rows = m;
  l.image_cols = n;
  l.anchor_rows = anchor_positions(m, s1, i0);
  l.anchor_cols = anchor_positions(n, s2, j0);
  l.overlap = Matrix::Zero(m, n);
  for (int ar : l.anchor_rows)
    for (int ac : l.anchor_cols) l.overlap.block(ar, ac, s1, s2).array() += 1.0;
  return l;
}

std::pair<int, int> PatchLayout::anchor(int q) const {
  const int nc = static_cast<int>(anchor_cols.size());
  return {anchor_rows[q / nc], anchor_cols[q % nc]};
}

Matrix extract_patches(const Matrix& img, const PatchLayout& l) {
  if (img.rows() != l.image_rows || img.cols() != l.image_cols)
    throw InputError("extract_patches: image does not match the patch layout");
  Matrix X(l.nodes(), l.features());
  for (int q = 0; q < l.nodes(); ++q) {
    const auto [ar, ac] = l.anchor(q);
    for (int a = 0; a < l.patch_rows; ++a)
      for (int b = 0; b < l.patch_cols; ++b) X(q, a * l.patch_cols + b) = img(ar + a, ac + b);
  }
  return X;
}

PatchMatrix extract_patches(const ImageGrid& img, int s1, int s2, int i0, int j0) {
  PatchMatrix p;
  p.layout = PatchLayout::make(img.rows(), img.cols(), s1, s2, i0, j0);
  p.X = extract_patches(img.values, p.layout);
  return p;
}

Matrix extract_patches_adjoint(const Matrix& dX, const PatchLayout& l) {
  if (dX.rows() != l.nodes() || dX.cols() != l.features())
    throw InputError("extract_patches_adjoint: shape does not match the patch layout");
  Matrix img = Matrix::Zero(l.image_rows, l.image_cols);
  for (int q = 0; q < l.nodes(); ++q) {
    const auto [ar, ac] = l.anchor(q);
    for (int a = 0; a < l.patch_rows; ++a)
      for (int b = 0; b < l.patch_cols; ++b) img(ar + a, ac + b) += dX(q, a * l.patch_cols + b);
  }
  return img;
}

Matrix assemble_patches(const Matrix& X, const PatchLayout& l) {
  if (X.rows() != l.nodes() || X.cols() != l.features())
    throw InputError("assemble_patches: matrix is " + std::to_string(X.rows()) + "x" +
                     std::to_string(X.cols()) + " but the layout has " + std::to_string(l.nodes()) +
                     " nodes of " + std::to_string(l.features()) + " features");
  Matrix img = extract_patches_adjoint(X, l);
  img.array() /= l.overlap.array();
  return img;
}

ImageGrid assemble_patches(const PatchMatrix& p) { return ImageGrid(assemble_patches(p.X, p.layout)); }

Matrix assemble_patches_adjoint(const Matrix& dimg, const PatchLayout& l) {
  if (dimg.rows() != l.image_rows || dimg.cols() != l.image_cols)
    throw InputError("assemble_patches_adjoint: image does not match the patch layout");
  const Matrix scaled = (dimg.array() / l.overlap.array()).matrix();
  return extract_patches(scaled, l);
}

SparseGraph SparseGraph::from_weights(SparseMatrix w, double sigma, int neighbors) {
  if (w.rows() != w.cols()) throw InputError("graph: weight matrix must be square");
  const int n = static_cast<int>(w.rows());
  w.makeCompressed();
  for (int i = 0; i < n; ++i) {
    for (SparseMatrix::InnerIterator it(w, i); it; ++it) {
      if (it.col() == i && it.value() != 0.0) throw InputError("graph: weights must have a zero diagonal");
      if (!(it.value() >= 0.0) || !std::isfinite(it.value()))
        throw InputError("graph: weights must be finite and nonnegative");
      if (w.coeff(it.col(), i) != it.value()) throw InputError("graph: weights must be symmetric");
    }
  }
  SparseGraph g;
  g.weights = std::move(w);
  g.sigma = sigma;
  g.neighbors = neighbors;
  g.degrees = Vector::Zero(n);
  for (int i = 0; i < n; ++i)
    for (SparseMatrix::InnerIterator it(g.weights, i); it; ++it) g.degrees[i] += it.value();
  g.propagation = renormalized_propagation(g);
  return g;
}

SparseGraph build_graph(const Matrix& X, int k) {
  const int n = static_cast<int>(X.rows());
  if (n < 2) throw InputError("build_graph: needs at least 2 nodes, got " + std::to_string(n));
  if (k < 1 || k >= n)
    throw InputError("build_graph: neighbour count must satisfy 1 <= k < N (k=" + std::to_string(k) +
                     ", N=" + std::to_string(n) + ")");
  // Directed k-NN lists as (squared distance, index), sorted.
  std::vector<std::pair<double, int>> knn(static_cast<std::size_t>(n) * k);
  parallel_for(0, n, [&](int i) {
    std::vector<std::pair<double, int>> cand;
    cand.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back((X.row(i) - X.row(j)).squaredNorm(), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    std::copy(cand.begin(), cand.begin() + k, knn.begin() + static_cast<std::ptrdiff_t>(i) * k);
  });

  std::vector<double> dist(knn.size());
  for (std::size_t e = 0; e < knn.size(); ++e) dist[e] = std::sqrt(knn[e].first);
  std::sort(dist.begin(), dist.end());
  const std::size_t mid = dist.size() / 2;
  double sigma = dist.size() % 2 ? dist[mid] : 0.5 * (dist[mid - 1] + dist[mid]);
  sigma = std::max(sigma, kSigmaFloor);
  const double inv_s2 = 1.0 / (sigma * sigma);

  // Union of both directions; the weight depends only on the pair distance,
  // so elementwise max keeps either copy.
  std::vector<std::vector<std::pair<int, double>>> rows(n);
  for (int i = 0; i < n; ++i) {
    for (int e = 0; e < k; ++e) {
      const auto [d2, j] = knn[static_cast<std::size_t>(i) * k + e];
      const double w = std::exp(-d2 * inv_s2);
      rows[i].emplace_back(j, w);
      rows[j].emplace_back(i, w);
    }
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) {
    auto& r = rows[i];
    std::sort(r.begin(), r.end());
    for (std::size_t e = 0; e < r.size(); ++e) {
      double w = r[e].second;
      while (e + 1 < r.size() && r[e + 1].first == r[e].first) w = std::max(w, r[++e].second);
      trip.emplace_back(i, r[e].first, w);
    }
  }
  SparseMatrix w(n, n);
  w.setFromTriplets(trip.begin(), trip.end());
  return SparseGraph::from_weights(std::move(w), sigma, k);
}

SparseMatrix normalized_laplacian(const SparseGraph& g) {
  const int n = g.nodes();
  Vector inv_sqrt(n);
  for (int i = 0; i < n; ++i) {
    if (!(g.degrees[i] > 0.0))
      throw InternalError("normalized_laplacian: node " + std::to_string(i) + " has zero degree");
    inv_sqrt[i] = 1.0 / std::sqrt(g.degrees[i]);
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) {
    trip.emplace_back(i, i, 1.0);
    for (SparseMatrix::InnerIterator it(g.weights, i); it; ++it)
      trip.emplace_back(i, it.col(), -inv_sqrt[i] * it.value() * inv_sqrt[it.col()]);
  }
  SparseMatrix l(n, n);
  l.setFromTriplets(trip.begin(), trip.end());
  return l;
}

SparseMatrix renormalized_propagation(const SparseGraph& g) {
  const int n = g.nodes();
  Vector inv_sqrt(n);
  for (int i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(1.0 + g.degrees[i]);
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) {
    trip.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
    for (SparseMatrix::InnerIterator it(g.weights, i); it; ++it)
      trip.emplace_back(i, it.col(), inv_sqrt[i] * it.value() * inv_sqrt[it.col()]);
  }
  SparseMatrix p(n, n);
  p.setFromTriplets(trip.begin(), trip.end());
  return p;
}

}  // namespace magic
