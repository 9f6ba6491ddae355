#include "magic/spatialconv.hpp"

#include <cmath>
#include <string>

namespace magic {

SpatialKernels SpatialKernels::zeros(int c) {
  if (c < 1) throw ConfigError("spatial kernels need at least one channel");
  SpatialKernels k;
  k.w1 = Matrix::Zero(c, kKernelTaps);
  k.w2 = Matrix::Zero(c, c * kKernelTaps);
  k.w3 = Matrix::Zero(1, c * kKernelTaps);
  return k;
}

void SpatialKernels::validate() const {
  const auto c = w1.rows();
  if (c < 1 || w1.cols() != kKernelTaps || w2.rows() != c || w2.cols() != c * kKernelTaps || w3.rows() != 1 ||
      w3.cols() != c * kKernelTaps)
    throw InputError("spatial kernels must be c x 9, c x 9c and 1 x 9c");
  if (!w1.allFinite() || !w2.allFinite() || !w3.allFinite()) throw InputError("spatial kernels must be finite");
}

Matrix im2col(const Matrix& stack, int m, int n) {
  const int channels = static_cast<int>(stack.rows());
  if (stack.cols() != static_cast<Eigen::Index>(m) * n) throw InputError("im2col: stack width must be m*n");
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(channels) * kKernelTaps, static_cast<Eigen::Index>(m) * n);
  for (int ch = 0; ch < channels; ++ch) {
    const double* src = stack.row(ch).data();
    for (int ky = 0; ky < kKernelSide; ++ky) {
      for (int kx = 0; kx < kKernelSide; ++kx) {
        double* dst = cols.row(ch * kKernelTaps + ky * kKernelSide + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int r = std::max(0, -dy); r < std::min(m, m - dy); ++r) {
          const int c0 = std::max(0, -dx);
          const int c1 = std::min(n, n - dx);
          for (int c = c0; c < c1; ++c) dst[r * n + c] = src[(r + dy) * n + c + dx];
        }
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, int channels, int m, int n) {
  if (cols.rows() != static_cast<Eigen::Index>(channels) * kKernelTaps ||
      cols.cols() != static_cast<Eigen::Index>(m) * n)
    throw InputError("col2im: shape mismatch");
  Matrix stack = Matrix::Zero(channels, static_cast<Eigen::Index>(m) * n);
  for (int ch = 0; ch < channels; ++ch) {
    double* dst = stack.row(ch).data();
    for (int ky = 0; ky < kKernelSide; ++ky) {
      for (int kx = 0; kx < kKernelSide; ++kx) {
        const double* src = cols.row(ch * kKernelTaps + ky * kKernelSide + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int r = std::max(0, -dy); r < std::min(m, m - dy); ++r) {
          const int c0 = std::max(0, -dx);
          const int c1 = std::min(n, n - dx);
          for (int c = c0; c < c1; ++c) dst[(r + dy) * n + c + dx] += src[r * n + c];
        }
      }
    }
  }
  return stack;
}

Matrix conv2d(const Matrix& stack, int m, int n, const Matrix& kernels) {
  if (kernels.cols() != stack.rows() * kKernelTaps)
    throw InputError("conv2d: kernels expect " + std::to_string(kernels.cols() / kKernelTaps) +
                     " input channels, got " + std::to_string(stack.rows()));
  return kernels * im2col(stack, m, n);
}

Matrix conv2d_backward(const Matrix& stack, int m, int n, const Matrix& kernels, const Matrix& grad_out,
                       Matrix& grad_kernels) {
  if (grad_out.rows() != kernels.rows() || grad_out.cols() != stack.cols())
    throw InputError("conv2d_backward: gradient shape mismatch");
  const Matrix cols = im2col(stack, m, n);
  grad_kernels = grad_out * cols.transpose();
  return col2im(kernels.transpose() * grad_out, static_cast<int>(stack.rows()), m, n);
}

Matrix cnn_module_phi(const Matrix& img, const SpatialKernels& k, Activation act, PhiTape* tape) {
  k.validate();
  const int m = static_cast<int>(img.rows());
  const int n = static_cast<int>(img.cols());
  const Eigen::Map<const Matrix> x(img.data(), 1, static_cast<Eigen::Index>(m) * n);
  Matrix h1 = conv2d(x, m, n, k.w1);
  Matrix h2 = conv2d(activate(act, h1), m, n, k.w2);
  Matrix out = conv2d(activate(act, h2), m, n, k.w3);
  if (tape) {
    tape->h1 = std::move(h1);
    tape->h2 = std::move(h2);
  }
  return Eigen::Map<Matrix>(out.data(), m, n);
}

Matrix cnn_module_phi_backward(const Matrix& img, const PhiTape& tape, const SpatialKernels& k, Activation act,
                               const Matrix& grad_out, SpatialKernels& grad_k) {
  const int m = static_cast<int>(img.rows());
  const int n = static_cast<int>(img.cols());
  const Eigen::Index mn = static_cast<Eigen::Index>(m) * n;
  const Eigen::Map<const Matrix> x(img.data(), 1, mn);
  const Eigen::Map<const Matrix> g3(grad_out.data(), 1, mn);
  Matrix dk;
  const Matrix da2 = conv2d_backward(activate(act, tape.h2), m, n, k.w3, g3, dk);
  grad_k.w3 += dk;
  const Matrix da1 = conv2d_backward(activate(act, tape.h1), m, n, k.w2, activate_backward(act, tape.h2, da2), dk);
  grad_k.w2 += dk;
  Matrix dx = conv2d_backward(x, m, n, k.w1, activate_backward(act, tape.h1, da1), dk);
  grad_k.w1 += dk;
  return Eigen::Map<Matrix>(dx.data(), m, n);
}

}  // namespace magic
