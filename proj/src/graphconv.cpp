#include "magic/graphconv.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace magic {

namespace {

void require_symmetric(const Matrix& m, const char* who) {
  if (m.rows() != m.cols()) throw InputError(std::string(who) + ": matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InputError(std::string(who) + ": matrix must be symmetric");
}

}  // namespace

void symmetric_eigen(const Matrix& laplacian, Vector& eigenvalues, Matrix& eigenvectors) {
  require_symmetric(laplacian, "symmetric_eigen");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver{Eigen::MatrixXd(laplacian)};
  if (solver.info() != Eigen::Success) throw InternalError("symmetric_eigen: eigensolver failed");
  eigenvalues = solver.eigenvalues();
  eigenvectors = solver.eigenvectors();
  for (Eigen::Index c = 0; c < eigenvectors.cols(); ++c) {
    for (Eigen::Index r = 0; r < eigenvectors.rows(); ++r) {
      const double v = eigenvectors(r, c);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) eigenvectors.col(c) *= -1.0;
        break;
      }
    }
  }
}

Vector spectral_conv_exact(const Vector& a, const Matrix& laplacian, const Vector& g_diag) {
  if (a.size() != laplacian.rows() || g_diag.size() != laplacian.rows())
    throw InputError("spectral_conv_exact: signal and filter must have one entry per node");
  Vector lambda;
  Matrix u;
  symmetric_eigen(laplacian, lambda, u);
  const Vector coeff = u.transpose() * a;
  return u * g_diag.cwiseProduct(coeff);
}

double chebyshev_polynomial(int k, double x) {
  if (k < 0) throw InputError("chebyshev_polynomial: order must be >= 0");
  if (k == 0) return 1.0;
  double prev = 1.0;
  double cur = x;
  for (int i = 2; i <= k; ++i) {
    const double next = 2.0 * x * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

Vector chebyshev_conv(const Vector& a, const SparseMatrix& laplacian, const ChebyshevFilter& f) {
  if (f.order() < 0) throw InputError("chebyshev_conv: filter needs at least one coefficient");
  if (!(f.lambda_max > 0.0)) throw InputError("chebyshev_conv: lambda_max must be > 0");
  if (a.size() != laplacian.rows()) throw InputError("chebyshev_conv: signal length does not match the graph");
  const double scale = 2.0 / f.lambda_max;
  auto apply_scaled = [&](const Vector& v) -> Vector { return scale * (laplacian * v) - v; };
  Vector out = f.coefficients[0] * a;
  if (f.order() == 0) return out;
  Vector prev = a;
  Vector cur = apply_scaled(a);
  out += f.coefficients[1] * cur;
  for (int k = 2; k <= f.order(); ++k) {
    Vector next = 2.0 * apply_scaled(cur) - prev;
    out += f.coefficients[k] * next;
    prev = std::move(cur);
    cur = std::move(next);
  }
  return out;
}

double largest_eigenvalue(const SparseMatrix& m, int iterations, double tolerance) {
  Vector x = Vector::LinSpaced(m.rows(), 1.0, 2.0);
  x /= x.norm();
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Vector y = m * x;
    const double next = y.norm();
    if (next == 0.0) return 0.0;
    x = y / next;
    const bool done = std::abs(next - lambda) <= tolerance * next;
    lambda = next;
    if (done) break;
  }
  return lambda;
}

Matrix gcn_layer(const Matrix& X, const SparseMatrix& propagation, const Matrix& theta) {
  if (propagation.rows() != X.rows() || propagation.cols() != X.rows())
    throw InputError("gcn_layer: propagation is " + std::to_string(propagation.rows()) + "x" +
                     std::to_string(propagation.cols()) + " for " + std::to_string(X.rows()) + " nodes");
  if (theta.rows() != X.cols())
    throw InputError("gcn_layer: kernel has " + std::to_string(theta.rows()) + " rows for " +
                     std::to_string(X.cols()) + " input features");
  if (X.cols() <= theta.cols()) return Matrix(propagation * X) * theta;
  return propagation * Matrix(X * theta);
}

Matrix gcn_module_psi(const Matrix& X, const SparseMatrix& propagation, const GraphKernels& kernels,
                      Activation act) {
  if (kernels.theta2.rows() != kernels.theta1.cols() || kernels.theta2.cols() != kernels.theta1.rows())
    throw InputError("gcn_module_psi: kernels must be d x F and F x d");
  const Matrix hidden = activate(act, gcn_layer(X, propagation, kernels.theta1));
  return gcn_layer(hidden, propagation, kernels.theta2);
}

}  // namespace magic
