#pragma once

#include "magic/patchgraph.hpp"

#include <vector>

namespace magic {

struct GraphKernels {
  Matrix theta1;  // d x F
  Matrix theta2;  // F x d

  int features() const { return static_cast<int>(theta1.rows()); }
  int width() const { return static_cast<int>(theta1.cols()); }
};

struct ChebyshevFilter {
  std::vector<double> coefficients;  // theta_0 .. theta_K
  double lambda_max = 2.0;

  int order() const { return static_cast<int>(coefficients.size()) - 1; }
};

// U diag(g) U^T a with L = U Lambda U^T from a dense symmetric eigensolver.
// Eigenvalues ascend; each eigenvector's first nonzero entry is positive.
// Meant for small N, as the reference for the polynomial paths.
Vector spectral_conv_exact(const Vector& a, const Matrix& laplacian, const Vector& g_diag);

// Eigenpairs with the convention above.
void symmetric_eigen(const Matrix& laplacian, Vector& eigenvalues, Matrix& eigenvectors);

// sum_k theta_k T_k(L~) a with L~ = (2 / lambda_max) L - I, using the
// recurrence T_k = 2 L~ T_{k-1} - T_{k-2}.
Vector chebyshev_conv(const Vector& a, const SparseMatrix& laplacian, const ChebyshevFilter& f);

// T_k(x) from the same recurrence.
double chebyshev_polynomial(int k, double x);

// Power-iteration estimate of the largest eigenvalue of a symmetric PSD matrix.
double largest_eigenvalue(const SparseMatrix& m, int iterations = 30, double tolerance = 1e-6);

// Z = P X Theta.
Matrix gcn_layer(const Matrix& X, const SparseMatrix& propagation, const Matrix& theta);

// Psi(X) = P act(P X Theta1) Theta2, no activation on the output.
Matrix gcn_module_psi(const Matrix& X, const SparseMatrix& propagation, const GraphKernels& kernels,
                      Activation act = Activation::Relu);

}  // namespace magic
