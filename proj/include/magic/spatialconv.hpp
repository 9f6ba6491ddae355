#pragma once

#include "magic/common.hpp"

namespace magic {

// A C x m x n feature stack is stored as a C x (m n) matrix, one channel per
// row. Kernel stacks are C_out x (C_in * 9) with columns ordered
// (input channel, kernel row, kernel col).
inline constexpr int kKernelSide = 3;
inline constexpr int kKernelTaps = kKernelSide * kKernelSide;

// Three-layer stack of Phi: 1 -> c -> c -> 1 channels.
struct SpatialKernels {
  Matrix w1;  // c x 9
  Matrix w2;  // c x 9c
  Matrix w3;  // 1 x 9c

  int channels() const { return static_cast<int>(w1.rows()); }
  static SpatialKernels zeros(int c);
  void validate() const;
};

// Patch columns for a 3x3 "same" cross-correlation with zero padding.
Matrix im2col(const Matrix& stack, int m, int n);
// Adjoint of im2col (overlapping entries are summed).
Matrix col2im(const Matrix& cols, int channels, int m, int n);

// Cross-correlation with zero padding; output keeps m x n.
Matrix conv2d(const Matrix& stack, int m, int n, const Matrix& kernels);

// Gradients of conv2d given d(out). grad_kernels is overwritten, the input
// gradient returned.
Matrix conv2d_backward(const Matrix& stack, int m, int n, const Matrix& kernels, const Matrix& grad_out,
                       Matrix& grad_kernels);

// Intermediates kept for back-propagation.
struct PhiTape {
  Matrix h1;  // c x mn pre-activation
  Matrix h2;  // c x mn pre-activation
};

// Phi(x) = w3 * act(w2 * act(w1 * x)), x an m x n image.
Matrix cnn_module_phi(const Matrix& img, const SpatialKernels& k, Activation act = Activation::Relu,
                      PhiTape* tape = nullptr);

// Accumulates kernel gradients into grad_k and returns d(img).
Matrix cnn_module_phi_backward(const Matrix& img, const PhiTape& tape, const SpatialKernels& k, Activation act,
                               const Matrix& grad_out, SpatialKernels& grad_k);

}  // namespace magic
