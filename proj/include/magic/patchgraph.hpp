#pragma once

#include "magic/geometry.hpp"

#include <Eigen/SparseCore>

#include <utility>
#include <vector>

namespace magic {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Bookkeeping for the image <-> patch-node transform. Anchors are 0-based
// top-left corners; the anchor grid on each axis is {0, step, 2 step, ...}
// clipped to size - patch, with size - patch appended when missing so that
// every pixel is covered without padding.
struct PatchLayout {
  int patch_rows = 6;
  int patch_cols = 6;
  int step_rows = 2;
  int step_cols = 2;
  int image_rows = 0;
  int image_cols = 0;
  std::vector<int> anchor_rows;
  std::vector<int> anchor_cols;
  Matrix overlap;  // m x n cover counts

  static PatchLayout make(int m, int n, int s1, int s2, int i0, int j0);

  int nodes() const { return static_cast<int>(anchor_rows.size() * anchor_cols.size()); }
  int features() const { return patch_rows * patch_cols; }
  // Anchor of node q, row-major over the anchor grid.
  std::pair<int, int> anchor(int q) const;
};

std::vector<int> anchor_positions(int size, int patch, int step);

struct PatchMatrix {
  Matrix X;  // N x d, row q = row-major patch at anchor q
  PatchLayout layout;
};

PatchMatrix extract_patches(const ImageGrid& img, int s1, int s2, int i0, int j0);
// Reuses a precomputed layout; img must match its image size.
Matrix extract_patches(const Matrix& img, const PatchLayout& layout);
// Overlap-average of all patch entries covering each pixel.
ImageGrid assemble_patches(const PatchMatrix& patches);
Matrix assemble_patches(const Matrix& X, const PatchLayout& layout);

// Adjoints used by back-propagation.
Matrix extract_patches_adjoint(const Matrix& dX, const PatchLayout& layout);
Matrix assemble_patches_adjoint(const Matrix& dimg, const PatchLayout& layout);

// Symmetric Gaussian k-NN graph over patch nodes. `weights` has no stored
// diagonal; self loops enter only through the renormalised propagation.
struct SparseGraph {
  SparseMatrix weights;
  Vector degrees;            // D_ii = sum_j W_ij
  SparseMatrix propagation;  // D~^-1/2 (I + W) D~^-1/2
  double sigma = 0.0;
  int neighbors = 0;

  int nodes() const { return static_cast<int>(weights.rows()); }

  // Validates W (square, symmetric, nonnegative, zero diagonal) and fills
  // the derived members.
  static SparseGraph from_weights(SparseMatrix w, double sigma = 0.0, int neighbors = 0);
};

inline constexpr double kSigmaFloor = 1e-8;

// k nearest neighbours by Euclidean distance (ties to the lower index),
// weights exp(-d^2 / sigma^2) with sigma the median retained distance,
// symmetrised by elementwise max.
SparseGraph build_graph(const Matrix& X, int k);
inline SparseGraph build_graph(const PatchMatrix& p, int k) { return build_graph(p.X, k); }

SparseMatrix normalized_laplacian(const SparseGraph& g);
SparseMatrix renormalized_propagation(const SparseGraph& g);

}  // namespace magic
